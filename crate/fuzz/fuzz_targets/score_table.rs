#![no_main]

use libfuzzer_sys::fuzz_target;
use oscd_core::scoring::ScoreTable;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = ScoreTable::parse_tsv(text) {
        let again = ScoreTable::parse_tsv(&table.to_tsv_string()).expect("re-parse");
        assert_eq!(again.methods, table.methods);
        assert_eq!(again.rows.len(), table.rows.len());
    }
});
