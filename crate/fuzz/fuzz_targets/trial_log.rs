#![no_main]

use libfuzzer_sys::fuzz_target;
use retrofit_core::hpo::read_trial_log;

fuzz_target!(|data: &[u8]| {
    let _ = read_trial_log(data);
});
