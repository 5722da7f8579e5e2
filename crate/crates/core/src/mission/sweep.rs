use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::run::{MissionConfig, MissionReport, PreparedMission, Splits};
use super::Mission;
use crate::discriminators::Branch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok { report: Box<MissionReport> },
    NotApplicable { reason: String },
    Error { message: String },
}

impl CellOutcome {
    fn from_result(r: Result<MissionReport>) -> Self {
        match r {
            Ok(report) => CellOutcome::Ok {
                report: Box::new(report),
            },
            Err(e) if e.is_not_applicable() => CellOutcome::NotApplicable {
                reason: e.to_string(),
            },
            Err(e) => CellOutcome::Error {
                message: e.to_string(),
            },
        }
    }

    pub fn a0(&self) -> Option<f64> {
        match self {
            CellOutcome::Ok { report } => Some(report.scores.a0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub mission_id: u32,
    pub openness: f64,
    pub policy: String,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub mission_id: u32,
    pub openness: f64,
    /// Entropy A0 minus EVT A0.
    pub gap: f64,
    /// Whether the gap is at least the previous point's; `None` for the first point.
    pub non_decreasing: Option<bool>,
}

/// How the entropy-minus-EVT gap moves as openness decreases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    /// Missions where both policies produced a score, by decreasing openness.
    pub points: Vec<TrendPoint>,
    /// The first point plus every point whose gap did not drop.
    pub satisfied: usize,
    /// At least three quarters of at least two comparable missions satisfied.
    pub holds: bool,
}

/// Gap trend from `(mission_id, openness, evt_a0, entropy_a0)` rows.
pub fn trend(rows: &[(u32, f64, Option<f64>, Option<f64>)]) -> Trend {
    let mut comparable: Vec<(u32, f64, f64)> = rows
        .iter()
        .filter_map(|&(id, open, evt, ent)| Some((id, open, ent? - evt?)))
        .collect();
    comparable.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let points: Vec<TrendPoint> = comparable
        .iter()
        .enumerate()
        .map(|(i, &(mission_id, openness, gap))| TrendPoint {
            mission_id,
            openness,
            gap,
            non_decreasing: (i > 0).then(|| gap >= comparable[i - 1].2),
        })
        .collect();
    let satisfied = points
        .iter()
        .filter(|p| p.non_decreasing != Some(false))
        .count();
    let n = points.len();
    Trend {
        holds: n >= 2 && 4 * satisfied >= 3 * n,
        satisfied,
        points,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: MissionConfig,
    pub missions: Vec<Mission>,
    pub policies: Vec<String>,
    /// Mission-major, policies in the order given.
    pub cells: Vec<SweepCell>,
    pub trend: Trend,
}

impl SweepReport {
    pub fn cell(&self, mission_id: u32, policy: &str) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.mission_id == mission_id && c.policy == policy)
    }

    /// One row per policy, one column per mission, A0 to 4 decimals;
    /// `/` marks a not-applicable cell and `error` a failed one.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy");
        for m in &self.missions {
            write!(out, ",{}", m.name()).unwrap();
        }
        out.push_str("\nopenness");
        for m in &self.missions {
            write!(out, ",{:.4}", m.openness).unwrap();
        }
        out.push('\n');
        for p in &self.policies {
            out.push_str(p);
            for m in &self.missions {
                let text = match self.cell(m.id, p).map(|c| &c.outcome) {
                    Some(CellOutcome::Ok { report }) => format!("{:.4}", report.scores.a0),
                    Some(CellOutcome::NotApplicable { .. }) => "/".into(),
                    _ => "error".into(),
                };
                write!(out, ",{text}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Line plot of A0 against openness, one series per policy.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const PAD: f64 = 50.0;
        const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
        let x_max = self
            .missions
            .iter()
            .map(|m| m.openness)
            .fold(0.0, f64::max)
            .max(1e-9)
            * 1.1;
        let px = |o: f64| PAD + o / x_max * (W - 2.0 * PAD);
        let py = |a: f64| H - PAD - a * (H - 2.0 * PAD);

        let mut s = String::new();
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
        writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
        writeln!(
            s,
            r#"<path d="M{PAD} {} V{} H{}" fill="none" stroke="black"/>"#,
            PAD,
            H - PAD,
            W - PAD
        )
        .unwrap();
        for i in 0..=5 {
            let a = i as f64 / 5.0;
            writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{a:.1}</text>"#,
                PAD - 6.0,
                py(a) + 4.0
            )
            .unwrap();
        }
        for m in &self.missions {
            let x = px(m.openness);
            writeln!(
                s,
                r#"<text x="{x:.1}" y="{}" text-anchor="middle">{:.3}</text>"#,
                H - PAD + 16.0,
                m.openness
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">openness</text>"#,
            W / 2.0,
            H - 10.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">A0</text>"#,
            H / 2.0,
            H / 2.0
        )
        .unwrap();
        for (i, p) in self.policies.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let mut pts: Vec<(f64, f64)> = self
                .missions
                .iter()
                .filter_map(|m| Some((m.openness, self.cell(m.id, p)?.outcome.a0()?)))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let coords: Vec<String> = pts
                .iter()
                .map(|&(o, a)| format!("{:.1},{:.1}", px(o), py(a)))
                .collect();
            if coords.len() > 1 {
                writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    coords.join(" ")
                )
                .unwrap();
            }
            for &(o, a) in &pts {
                writeln!(
                    s,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                    px(o),
                    py(a)
                )
                .unwrap();
            }
            let ly = PAD + 16.0 * i as f64;
            writeln!(
                s,
                r#"<text x="{}" y="{ly}" fill="{color}">{p}</text>"#,
                W - PAD - 60.0
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Trains and calibrates each mission once, then evaluates every policy on
/// it. Missions are spread over `threads` workers; results do not depend on
/// the thread count. Failures are recorded per cell.
pub fn sweep(
    missions: &[Mission],
    splits: Splits<'_>,
    policies: &[String],
    cfg: &MissionConfig,
    threads: usize,
) -> Result<SweepReport> {
    cfg.validate()?;
    if missions.is_empty() || policies.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one mission and one policy".into(),
        ));
    }
    for p in policies {
        cfg.policy(p, 0.0)?;
    }
    let run_one = |m: &Mission| -> Vec<SweepCell> {
        let prepared = PreparedMission::prepare(m, splits, cfg);
        policies
            .iter()
            .map(|name| {
                let policy = cfg.policy(name, m.openness).expect("policy names checked");
                let outcome = match &prepared {
                    Ok(p) => CellOutcome::from_result(p.evaluate(policy)),
                    Err(e) => CellOutcome::Error {
                        message: e.to_string(),
                    },
                };
                SweepCell {
                    mission_id: m.id,
                    openness: m.openness,
                    policy: name.clone(),
                    outcome,
                }
            })
            .collect()
    };

    let threads = threads.clamp(1, missions.len());
    let mut per_mission: Vec<Option<Vec<SweepCell>>> = vec![None; missions.len()];
    if threads == 1 {
        for (slot, m) in per_mission.iter_mut().zip(missions) {
            *slot = Some(run_one(m));
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let run_one = &run_one;
                    scope.spawn(move || {
                        missions
                            .iter()
                            .enumerate()
                            .skip(t)
                            .step_by(threads)
                            .map(|(i, m)| (i, run_one(m)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, cells) in h.join().expect("sweep worker panicked") {
                    per_mission[i] = Some(cells);
                }
            }
        });
    }
    let cells: Vec<SweepCell> = per_mission
        .into_iter()
        .flat_map(|c| c.expect("every mission ran"))
        .collect();

    let a0 = |id: u32, branch: Branch| -> Option<f64> {
        let name = match branch {
            Branch::Evt => "evt",
            Branch::Entropy => "entropy",
        };
        cells
            .iter()
            .find(|c| c.mission_id == id && c.policy == name)
            .and_then(|c| c.outcome.a0())
    };
    let rows: Vec<_> = missions
        .iter()
        .map(|m| {
            (
                m.id,
                m.openness,
                a0(m.id, Branch::Evt),
                a0(m.id, Branch::Entropy),
            )
        })
        .collect();
    Ok(SweepReport {
        config: cfg.clone(),
        missions: missions.to_vec(),
        policies: policies.to_vec(),
        trend: trend(&rows),
        cells,
    })
}
