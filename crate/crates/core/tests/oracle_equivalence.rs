mod common;

use common::{build_fixture, inputs, CASES};
use hsc::runtime::RunOptions;

#[test]
fn every_fixture_schedule_matches_the_oracle() {
    for case in CASES {
        for &sch in case.schedules {
            let b = build_fixture(case.program, sch);
            for seed in 0..3 {
                let args = inputs(case.program, case.dcs, seed);
                let want = b.oracle(None, case.dcs, &args).unwrap();
                let (got, _) = b.run(None, case.dcs, &args, RunOptions { workers: 4, race_check: true }).unwrap();
                if case.reassociated.contains(&sch) {
                    assert!(got.approx_eq(&want, 1e-4), "{sch} seed {seed}: {got} vs {want}");
                } else {
                    assert_eq!(got, want, "{sch} seed {seed}");
                }
            }
        }
    }
}
