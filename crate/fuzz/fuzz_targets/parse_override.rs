#![no_main]

use libfuzzer_sys::fuzz_target;
use qrepeater::config::{parse_override, RunConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(arg) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((path, _)) = parse_override(arg) {
        assert!(!path.is_empty());
        let _ = RunConfig::load("", &[arg.to_string()]);
    }
});
