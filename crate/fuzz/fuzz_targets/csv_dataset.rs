#![no_main]

use libfuzzer_sys::fuzz_target;
use retrofit_core::ingest::load_dataset_from_reader;
use retrofit_core::DatasetSchema;

fuzz_target!(|data: &[u8]| {
    let schema = DatasetSchema::latvian();
    // rejected rows are reported, never panics
    let _ = load_dataset_from_reader(data, &schema);
});
