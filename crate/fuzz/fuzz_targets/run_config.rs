#![no_main]

use libfuzzer_sys::fuzz_target;
use ubp_cli::config::{parse_run_config, ConfigFormat};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_run_config(text, ConfigFormat::Toml);
    let _ = parse_run_config(text, ConfigFormat::Json);
});
