#![no_main]

use libfuzzer_sys::fuzz_target;
use retrofit_core::DatasetSchema;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(schema) = DatasetSchema::from_json_str(text) {
            let _ = schema.fingerprint();
        }
    }
});
