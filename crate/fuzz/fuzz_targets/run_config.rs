#![no_main]

use libfuzzer_sys::fuzz_target;
use oscd_cli::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let _ = cfg.validate();
        let _ = cfg.fingerprint();
        let again = RunConfig::parse(&cfg.to_toml()).expect("re-parse");
        assert_eq!(again.fingerprint(), cfg.fingerprint());
    }
});
