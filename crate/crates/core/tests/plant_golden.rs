//! Pins the plant to frozen golden vectors and checks its global properties:
//! formant ordering over a random sweep and an empirical Lipschitz bound.

use babble_core::plant::{formant_map, ArticulatorySample, SpeakerPlant};
use babble_core::rng::RngStream;

fn golden_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data/plant_golden.csv")
}

#[test]
fn golden_vectors_match() {
    let text = std::fs::read_to_string(golden_path()).expect("golden csv present");
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("speaker,jh,"));
    let mut checked = 0;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 1 + 6 + 18, "line {}", lineno + 2);
        let plant = SpeakerPlant::by_name(fields[0]).unwrap();
        let mut a = [0.0; 6];
        for (v, f) in a.iter_mut().zip(&fields[1..7]) {
            *v = f.parse::<f64>().unwrap();
        }
        let frame = plant.synthesize_frame(&ArticulatorySample::from_array(a));
        for (j, f) in fields[7..].iter().enumerate() {
            let want: f64 = f.parse().unwrap();
            let got = frame.bands[j];
            assert!(
                (got - want).abs() <= 1e-12,
                "line {} speaker {} band {}: got {got:.17e}, want {want:.17e}",
                lineno + 2,
                fields[0],
                j + 1
            );
        }
        checked += 1;
    }
    // 3 speakers x 5 canonical inputs
    assert_eq!(checked, 15);
}

#[test]
fn formant_ordering_over_sweep() {
    let mut s = RngStream::new(99, "ordercheck");
    for _ in 0..10_000 {
        let mut arr = [0.0; 6];
        arr.iter_mut().for_each(|v| *v = s.next_range(-1.0, 1.0));
        let a = ArticulatorySample::from_array(arr);
        for lambda in [0.88, 1.0, 1.12] {
            let (f, _) = formant_map(&a, lambda);
            assert!(
                f[0] < f[1] && f[1] < f[2],
                "ordering violated at {arr:?} lambda {lambda}: {f:?}"
            );
        }
    }
}

#[test]
fn empirical_lipschitz_pinned() {
    // same sweep procedure and stream as the pilot that froze the bound
    let plants = [SpeakerPlant::s1(), SpeakerPlant::rs(), SpeakerPlant::s2()];
    let mut s = RngStream::new(7, "lipschitz");
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let mut a = [0.0; 6];
        a.iter_mut().for_each(|v| *v = s.next_range(-1.0, 1.0));
        let mut b = [0.0; 6];
        for (bv, av) in b.iter_mut().zip(&a) {
            *bv = (av + s.next_range(-0.05, 0.05)).clamp(-1.0, 1.0);
        }
        let dn = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        if dn == 0.0 {
            continue;
        }
        let (sa, sb) = (
            ArticulatorySample::from_array(a),
            ArticulatorySample::from_array(b),
        );
        for plant in &plants {
            let fa = plant.synthesize_frame(&sa);
            let fb = plant.synthesize_frame(&sb);
            worst = worst.max(fa.dist(&fb) / dn);
        }
    }
    // pilot value 13.426344; bound pinned at 1.5x the pilot
    assert!(
        (worst - 13.426344).abs() < 1e-4,
        "sweep L = {worst}, expected the pilot value"
    );
    assert!(worst <= 20.139516, "sweep L = {worst} exceeds pinned bound");
}
