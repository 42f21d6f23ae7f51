//! Injects each fault type twenty times into the claims scenario and prints
//! the summary table.

use patchboard::harness::{Campaign, FaultKind, Scenario};

fn main() {
    let campaign = Campaign::new(Scenario::builtin("claims").unwrap()).unwrap();
    let report = campaign.run(&FaultKind::ALL, 20, 7).unwrap();
    print!("{}", report.to_csv());
}
