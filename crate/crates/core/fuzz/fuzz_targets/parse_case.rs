#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(case) = voltctl::parse_case(text) {
        // anything accepted must assemble and survive a write/parse cycle
        let _ = voltctl::build_admittance(&case);
        let again = voltctl::parse_case(&voltctl::netcase::write_case(&case)).expect("written case reparses");
        assert_eq!(again.buses.len(), case.buses.len());
        assert_eq!(again.branches.len(), case.branches.len());
    }
});
