#![no_main]

use libfuzzer_sys::fuzz_target;
use qrepeater::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_toml_str(text) {
        // Anything accepted must echo and produce valid parameters.
        cfg.network.validate().unwrap();
        let _ = cfg.header_lines();
    }
});
