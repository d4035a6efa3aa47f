use ledmocap::detector::{period_stats, StdBound};
use ledmocap::event::{Event, Polarity, SensorGeometry};
use ledmocap::sdtv::{pixel_periods, Sdtv, StackSource};
use ledmocap::sim::noisy_blink_fixture;
use proptest::prelude::*;

fn stack(v: &Sdtv, pixel: usize) -> Vec<i16> {
    let mut out = Vec::new();
    v.ordered_stack(pixel, &mut out);
    out
}

/// Events on a 3x2 sensor; the whole stream spans less than the saturation
/// limit.
fn arb_stream() -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0u16..3, 0u16..2, any::<bool>(), 0u64..80), 1..400).prop_map(|raw| {
        let mut t = 0;
        raw.into_iter()
            .map(|(x, y, on, dt)| {
                t += dt;
                Event::new(x, y, if on { Polarity::On } else { Polarity::Off }, t)
            })
            .collect()
    })
}

/// Per-pixel timeline with same-timestamp runs collapsed to the last event.
fn timeline(events: &[Event], g: SensorGeometry, pixel: usize) -> Vec<(u64, Polarity)> {
    let mut out: Vec<(u64, Polarity)> = Vec::new();
    for e in events.iter().filter(|e| g.index(e.x, e.y) == pixel) {
        match out.last_mut() {
            Some(last) if last.0 == e.t => last.1 = e.polarity,
            _ => out.push((e.t, e.polarity)),
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn stacks_hold_the_latest_signed_deltas(events in arb_stream(), depth in 4usize..17, split in 0usize..400) {
        let g = SensorGeometry::new(3, 2).unwrap();
        let mut v = Sdtv::new(g, depth).unwrap();
        // Batch boundaries must not matter.
        let split = split.min(events.len());
        v.ingest_batch(&events[..split]).unwrap();
        v.ingest_batch(&events[split..]).unwrap();

        for pixel in 0..g.pixel_count() {
            let line = timeline(&events, g, pixel);
            let s = stack(&v, pixel);
            let expected: Vec<i16> = line
                .windows(2)
                .map(|w| (w[1].0 - w[0].0) as i16 * w[1].1.sign())
                .collect();
            let keep = expected.len().saturating_sub(depth);
            prop_assert_eq!(&s, &expected[keep..].to_vec());
            prop_assert!(s.iter().all(|&d| d != 0 && d != i16::MIN));

            if let Some(&(last, _)) = line.last() {
                prop_assert_eq!(v.last_timestamp(pixel), Some(last));
                let span: u64 = s.iter().map(|d| d.unsigned_abs() as u64).sum();
                let oldest = line[line.len() - 1 - s.len()].0;
                prop_assert_eq!(last - span, oldest);
            }
        }
    }

    #[test]
    fn clean_square_wave_gives_exact_periods(period in 40u64..3000, on_frac in 0.01f64..0.5, depth in 6usize..17, cycles in 4u64..12) {
        let on = ((period as f64 * on_frac) as u64).max(1);
        let mut events = Vec::new();
        for k in 0..cycles {
            events.push(Event::new(0, 0, Polarity::On, 7 + k * period));
            events.push(Event::new(0, 0, Polarity::Off, 7 + k * period + on));
        }
        let mut v = Sdtv::new(SensorGeometry::new(1, 1).unwrap(), depth).unwrap();
        v.ingest_batch(&events).unwrap();
        let periods = pixel_periods(&stack(&v, 0));
        prop_assert!(!periods.is_empty());
        prop_assert!(periods.iter().all(|&p| p as u64 == period));
    }

    #[test]
    fn phase_does_not_change_periods(phase in 0u64..578, depth in 8usize..17) {
        let period = 578;
        let mut events = Vec::new();
        for k in 0..10 {
            events.push(Event::new(0, 0, Polarity::On, phase + k * period));
            events.push(Event::new(0, 0, Polarity::Off, phase + k * period + 4));
        }
        let mut v = Sdtv::new(SensorGeometry::new(1, 1).unwrap(), depth).unwrap();
        v.ingest_batch(&events).unwrap();
        prop_assert!(pixel_periods(&stack(&v, 0)).iter().all(|&p| p == period as u32));
    }
}

#[test]
fn all_positive_stack_has_no_period() {
    assert!(pixel_periods(&[5, 300, 300, 300]).is_empty());
    assert_eq!(pixel_periods(&[5, -30, 270, -30, 270, -30]), vec![300, 300]);
}

#[test]
fn blink_fixture_statistics() {
    let (g, events) = noisy_blink_fixture();
    let mut v = Sdtv::new(g, 16).unwrap();
    v.ingest_batch(&events).unwrap();
    let stats = period_stats(&v, &[0], StdBound::default());
    assert_eq!(stats.len(), 1);
    let s = &stats[0];
    assert!((295.0..=305.0).contains(&s.mean_us), "mean {}", s.mean_us);
    assert!(s.std_us <= 10.0);
}
