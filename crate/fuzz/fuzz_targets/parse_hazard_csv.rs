#![no_main]

use libfuzzer_sys::fuzz_target;
use skfcpd::pipeline::parse_hazard_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(points) = parse_hazard_csv(data) {
        assert!(points.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(points.iter().all(|&(_, h)| (0.0..=1.0).contains(&h)));
    }
});
