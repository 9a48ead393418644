//! Runs the shipped scenario manifest end to end. Scenarios that exist to
//! demonstrate a failure mode declare their expected exit code; matching it
//! counts as a pass, so one green run certifies both the mathematics and
//! the gating.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::commands::{self, Kind};
use crate::config::{self, Overrides};
use crate::outcome::Failure;

pub struct Scenario {
    pub name: &'static str,
    pub command: Kind,
    pub source: &'static str,
    pub expect_code: u8,
}

pub const MANIFEST: &[Scenario] = &[
    Scenario {
        name: "shrinking-sphere",
        command: Kind::Evolve,
        source: include_str!("../../scenarios/shrinking-sphere.toml"),
        expect_code: 0,
    },
    Scenario {
        name: "einstein-fixed-point",
        command: Kind::Evolve,
        source: include_str!("../../scenarios/einstein-fixed-point.toml"),
        expect_code: 0,
    },
    Scenario {
        name: "flat-torus-spectrum",
        command: Kind::Spectrum,
        source: include_str!("../../scenarios/flat-torus-spectrum.toml"),
        expect_code: 0,
    },
    Scenario {
        name: "drifted-torus-identities",
        command: Kind::Verify,
        source: include_str!("../../scenarios/drifted-torus-identities.toml"),
        expect_code: 0,
    },
    Scenario {
        name: "conformal-torus-flow",
        command: Kind::Evolve,
        source: include_str!("../../scenarios/conformal-torus-flow.toml"),
        expect_code: 0,
    },
    Scenario {
        name: "mesh-sphere-flow",
        command: Kind::Evolve,
        source: include_str!("../../scenarios/mesh-sphere-flow.toml"),
        expect_code: 0,
    },
    Scenario {
        name: "sphere-monotonicity",
        command: Kind::CheckHypotheses,
        source: include_str!("../../scenarios/sphere-monotonicity.toml"),
        expect_code: 0,
    },
    Scenario {
        name: "sphere-monotonicity-rejected",
        command: Kind::CheckHypotheses,
        source: include_str!("../../scenarios/sphere-monotonicity-rejected.toml"),
        expect_code: 2,
    },
    Scenario {
        name: "coupled-monotonicity-constant",
        command: Kind::CheckHypotheses,
        source: include_str!("../../scenarios/coupled-monotonicity-constant.toml"),
        expect_code: 0,
    },
    Scenario {
        name: "torus-drift-gate",
        command: Kind::CheckHypotheses,
        source: include_str!("../../scenarios/torus-drift-gate.toml"),
        expect_code: 2,
    },
    Scenario {
        name: "scalar-minimum-flow",
        command: Kind::CheckHypotheses,
        source: include_str!("../../scenarios/scalar-minimum-flow.toml"),
        expect_code: 0,
    },
    Scenario {
        name: "broken-coupling",
        command: Kind::Verify,
        source: include_str!("../../scenarios/broken-coupling.toml"),
        expect_code: 3,
    },
];

pub fn run(overrides: &Overrides, threads: Option<usize>) -> Result<String, Failure> {
    // Scenario files pin their own tiers and seeds; only the output root
    // follows the invocation.
    let scoped = Overrides {
        out: overrides.out.clone(),
        env_out: overrides.env_out.clone(),
        tier: None,
        seed: None,
    };
    let workers = threads
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map_or(1, |p| p.get())
        })
        .clamp(1, MANIFEST.len());

    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<(u8, String)>>> =
        MANIFEST.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= MANIFEST.len() {
                    break;
                }
                let outcome = run_scenario(&MANIFEST[idx], &scoped);
                *results[idx].lock().expect("no poisoned scenario slots") = Some(outcome);
            });
        }
    });

    let mut table = String::new();
    let mut first_mismatch: Option<(u8, &'static str)> = None;
    for (scenario, slot) in MANIFEST.iter().zip(&results) {
        let (code, detail) = slot
            .lock()
            .expect("no poisoned scenario slots")
            .take()
            .expect("every scenario ran");
        let matched = code == scenario.expect_code;
        if !matched && first_mismatch.is_none() {
            first_mismatch = Some((code, scenario.name));
        }
        table.push_str(&format!(
            "{:<32} expected {} got {} {} {}\n",
            scenario.name,
            scenario.expect_code,
            code,
            if matched { "ok  " } else { "DIFF" },
            detail.lines().next().unwrap_or(""),
        ));
    }

    match first_mismatch {
        None => Ok(format!(
            "{table}all {} scenarios matched their expected outcome",
            MANIFEST.len()
        )),
        Some((code, name)) => {
            let msg = format!("{table}scenario {name} diverged from the manifest");
            Err(match code {
                1 => Failure::usage(msg),
                2 => Failure::hypothesis(msg),
                4 => Failure::numerical(msg),
                _ => Failure::residual(msg),
            })
        }
    }
}

fn run_scenario(scenario: &Scenario, overrides: &Overrides) -> (u8, String) {
    let resolved = match config::load_embedded(scenario.source, scenario.name, overrides) {
        Ok(resolved) => resolved,
        Err(failure) => return (failure.code(), failure.message().to_string()),
    };
    match commands::dispatch(scenario.command, &resolved) {
        Ok(summary) => (0, summary),
        Err(failure) => (failure.code(), failure.message().to_string()),
    }
}
