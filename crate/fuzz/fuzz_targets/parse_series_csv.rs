#![no_main]

use libfuzzer_sys::fuzz_target;
use skfcpd::pipeline::{parse_series_csv, write_series_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(table) = parse_series_csv(data) else { return };
    let mut out = Vec::new();
    write_series_csv(&table, &mut out).expect("a parsed table serializes");
    let again = parse_series_csv(out.as_slice()).expect("serialized output parses");
    assert_eq!(again, table);
});
