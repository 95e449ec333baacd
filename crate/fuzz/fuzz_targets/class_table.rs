#![no_main]

use libfuzzer_sys::fuzz_target;
use retrofit_core::features::EnergyClassTable;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = EnergyClassTable::from_json_str(text) {
        for a in &t.classes {
            for b in &t.classes {
                for area in [1.0, 100.0, 1e6] {
                    let d = t.energy_performance_delta(a, b, area).unwrap();
                    assert_eq!(d, -t.energy_performance_delta(b, a, area).unwrap());
                }
            }
        }
    }
});
