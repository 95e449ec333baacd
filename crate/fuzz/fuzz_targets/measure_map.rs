#![no_main]

use libfuzzer_sys::fuzz_target;
use retrofit_core::measures::MeasureMap;

// first line is the map, the rest are raw measure strings
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (map, rest) = text.split_once('\n').unwrap_or((text, ""));
    let map = MeasureMap::from_json_str(map).unwrap_or_else(|_| MeasureMap::uk_default());
    let raw: Vec<&str> = rest.lines().collect();
    let _ = map.map_measures(&raw);
});
