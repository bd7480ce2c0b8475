#![no_main]

use libfuzzer_sys::fuzz_target;
use ubp_core::synth::export::{parse_appearance_csv, parse_dataset_manifest, parse_labels, parse_ppg_csv};

// Every dataset file parser sees the same input.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_dataset_manifest(text);
    let _ = parse_labels(text);
    let _ = parse_ppg_csv(text);
    let _ = parse_appearance_csv(text);
});
