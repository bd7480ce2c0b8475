#![no_main]

use libfuzzer_sys::fuzz_target;
use ubp_core::evaluation::report::{parse_curve_csv, parse_fusion_csv, parse_metrics_csv, parse_subgroup_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_metrics_csv(text);
    let _ = parse_fusion_csv(text);
    let _ = parse_curve_csv(text);
    let _ = parse_subgroup_csv(text);
});
