#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = gan_introspect::dataio::fseq_from_bytes(data);
});
