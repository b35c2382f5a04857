#![no_main]

use libfuzzer_sys::fuzz_target;
use skfcpd::pipeline::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(settings) = parse_config(text) {
        assert!(settings.keys().all(|k| !k.is_empty() && !k.contains('_')));
    }
});
