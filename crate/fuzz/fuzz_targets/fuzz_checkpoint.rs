#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = gan_introspect::net::checkpoint_from_bytes(data) {
        // anything that parses must rebuild into networks cleanly
        let _ = ckpt.restore_generator();
        let _ = ckpt.restore_discriminator();
    }
});
