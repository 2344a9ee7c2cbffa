#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // must never panic or over-allocate; corrupt input maps to an error
    let _ = gan_introspect::dataio::amat_from_bytes(data);
});
