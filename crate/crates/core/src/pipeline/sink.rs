use std::io::{self, Write};

use serde::Serialize;

use crate::detector::DetectionReport;

/// One pose per processed batch, body in the world frame.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoseRecord {
    pub t_us: u64,
    pub frame: &'static str,
    pub position_m: [f64; 3],
    /// Hemisphere fixed by `w >= 0`.
    pub quaternion_wxyz: [f64; 4],
    pub leds_used: Vec<u32>,
    pub reproj_rmse_px: Option<f64>,
    /// Absent in deterministic runs so that outputs compare byte for byte.
    pub latency_us: Option<u64>,
}

/// Destination for stage 3 output.
pub trait PoseSink: Send {
    fn pose(&mut self, record: &PoseRecord) -> io::Result<()>;

    /// Called for every processed batch, before its pose (if any).
    fn detection(&mut self, _report: &DetectionReport) -> io::Result<()> {
        Ok(())
    }

    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub struct JsonlSink<W: Write> {
    out: W,
}

impl<W: Write + Send> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write + Send> PoseSink for JsonlSink<W> {
    fn pose(&mut self, record: &PoseRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    fn finish(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

pub const CSV_HEADER: &str =
    "t_us,frame,x_m,y_m,z_m,qw,qx,qy,qz,leds_used,reproj_rmse_px,latency_us";

/// Same columns as the JSON records; `leds_used` is `;`-separated and
/// missing values are empty.
pub struct CsvSink<W: Write> {
    out: W,
    header_written: bool,
}

impl<W: Write + Send> CsvSink<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            header_written: false,
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn header(&mut self) -> io::Result<()> {
        if !self.header_written {
            writeln!(self.out, "{CSV_HEADER}")?;
            self.header_written = true;
        }
        Ok(())
    }
}

impl<W: Write + Send> PoseSink for CsvSink<W> {
    fn pose(&mut self, r: &PoseRecord) -> io::Result<()> {
        self.header()?;
        let [x, y, z] = r.position_m;
        let [qw, qx, qy, qz] = r.quaternion_wxyz;
        let leds: Vec<String> = r.leds_used.iter().map(u32::to_string).collect();
        let rmse = r.reproj_rmse_px.map(|v| v.to_string()).unwrap_or_default();
        let lat = r.latency_us.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            self.out,
            "{},{},{x},{y},{z},{qw},{qx},{qy},{qz},{},{rmse},{lat}",
            r.t_us,
            r.frame,
            leds.join(";")
        )
    }

    fn finish(&mut self) -> io::Result<()> {
        self.header()?;
        self.out.flush()
    }
}

/// Keeps everything in memory; for tests and embedding.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub poses: Vec<PoseRecord>,
    pub reports: Vec<DetectionReport>,
    pub keep_reports: bool,
}

impl MemorySink {
    pub fn with_reports() -> Self {
        Self {
            keep_reports: true,
            ..Self::default()
        }
    }
}

impl PoseSink for MemorySink {
    fn pose(&mut self, record: &PoseRecord) -> io::Result<()> {
        self.poses.push(record.clone());
        Ok(())
    }

    fn detection(&mut self, report: &DetectionReport) -> io::Result<()> {
        if self.keep_reports {
            self.reports.push(report.clone());
        }
        Ok(())
    }
}

impl<S: PoseSink + ?Sized> PoseSink for &mut S {
    fn pose(&mut self, record: &PoseRecord) -> io::Result<()> {
        (**self).pose(record)
    }

    fn detection(&mut self, report: &DetectionReport) -> io::Result<()> {
        (**self).detection(report)
    }

    fn finish(&mut self) -> io::Result<()> {
        (**self).finish()
    }
}

impl<S: PoseSink + ?Sized> PoseSink for Box<S> {
    fn pose(&mut self, record: &PoseRecord) -> io::Result<()> {
        (**self).pose(record)
    }

    fn detection(&mut self, report: &DetectionReport) -> io::Result<()> {
        (**self).detection(report)
    }

    fn finish(&mut self) -> io::Result<()> {
        (**self).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> PoseRecord {
        PoseRecord {
            t_us: 2500,
            frame: "world",
            position_m: [1.0, -0.5, 0.25],
            quaternion_wxyz: [1.0, 0.0, 0.0, 0.0],
            leds_used: vec![0, 1, 2, 4],
            reproj_rmse_px: Some(0.125),
            latency_us: None,
        }
    }

    #[test]
    fn jsonl_has_the_documented_fields() {
        let mut s = JsonlSink::new(Vec::new());
        s.pose(&record()).unwrap();
        let text = String::from_utf8(s.into_inner()).unwrap();
        assert_eq!(
            text,
            "{\"t_us\":2500,\"frame\":\"world\",\"position_m\":[1.0,-0.5,0.25],\"quaternion_wxyz\":[1.0,0.0,0.0,0.0],\
             \"leds_used\":[0,1,2,4],\"reproj_rmse_px\":0.125,\"latency_us\":null}\n"
        );
    }

    #[test]
    fn csv_mirrors_the_json_columns() {
        let mut s = CsvSink::new(Vec::new());
        s.pose(&record()).unwrap();
        s.finish().unwrap();
        let text = String::from_utf8(s.into_inner()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(
            lines.next(),
            Some("2500,world,1,-0.5,0.25,1,0,0,0,0;1;2;4,0.125,")
        );
    }
}
