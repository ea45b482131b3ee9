#![no_main]

use libfuzzer_sys::fuzz_target;
use qrepeater::config::{parse_axis_spec, MAX_AXIS_POINTS};
use qrepeater::NetworkParams;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(axis) = parse_axis_spec(spec) {
        assert!(!axis.values.is_empty());
        if spec.contains("lin:") || spec.contains("log:") {
            assert!(axis.values.len() <= MAX_AXIS_POINTS);
        }
        for &v in &axis.values {
            let mut p = NetworkParams::default();
            axis.parameter.apply(&mut p, v);
            p.validate().unwrap();
        }
    }
});
