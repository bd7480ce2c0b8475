#![no_main]

use libfuzzer_sys::fuzz_target;
use ubp_core::neural::parse_checkpoint;

// Input: manifest JSON, a NUL byte, then the raw parameter blob.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let Ok(manifest) = std::str::from_utf8(&data[..split]) else { return };
    let blob = data.get(split + 1..).unwrap_or(&[]);
    let _ = parse_checkpoint(manifest, blob);
});
