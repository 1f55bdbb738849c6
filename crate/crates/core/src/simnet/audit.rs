//! Post-run trace auditor. Replays a trace against the scenario's ground
//! truth and reports every protocol invariant it finds broken.

use std::collections::{BTreeMap, BTreeSet};

use super::report::{TraceEvent, Violation};
use super::scenario::{Scenario, ScheduleEntry};
use crate::payment::{audit_log, LedgerRecord};

fn v(rule: &str, detail: String) -> Violation {
    Violation {
        rule: rule.to_string(),
        detail,
    }
}

fn pair(a: &str, b: &str) -> (String, String) {
    if a < b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

pub fn audit(scenario: &Scenario, trace: &[TraceEvent], ledger: &[LedgerRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    let costs: BTreeMap<&str, u64> = scenario.nodes.iter().map(|n| (n.name.as_str(), n.cost)).collect();
    let mut up: BTreeMap<(String, String), bool> = scenario.links.iter().map(|l| (pair(&l.a, &l.b), l.up)).collect();
    let bound_us = (scenario.defaults.keepalive_timeout_ms + scenario.defaults.keepalive_period_ms) * 1_000;

    for ev in trace {
        match ev {
            TraceEvent::Send {
                kind,
                broadcast: true,
                node,
                name,
                ..
            } if kind == "data" => {
                out.push(v("content_broadcast", format!("{node} broadcast content {name}")));
            }
            TraceEvent::Recv {
                t,
                sent,
                latency_us,
                node,
                name,
                ..
            } if *t < sent + latency_us => {
                out.push(v(
                    "causality",
                    format!("{node} received {name} at {t} before {sent}+{latency_us}"),
                ));
            }
            TraceEvent::Link { a, b, up: u, .. } => {
                up.insert(pair(a, b), *u);
            }
            TraceEvent::Path {
                node,
                prefix,
                route,
                price,
                ..
            } => {
                let expected: u64 = route
                    .iter()
                    .skip(1)
                    .map(|n| costs.get(n.as_str()).copied().unwrap_or(0))
                    .sum();
                if expected != *price {
                    out.push(v(
                        "price_additivity",
                        format!("{node} {prefix} route {route:?} priced {price}, costs sum to {expected}"),
                    ));
                }
                let distinct: BTreeSet<&String> = route.iter().collect();
                if distinct.len() != route.len() {
                    out.push(v(
                        "route_simple",
                        format!("{node} {prefix} route {route:?} repeats a node"),
                    ));
                }
                for w in route.windows(2) {
                    if !scenario.has_link(&w[0], &w[1]) {
                        out.push(v(
                            "route_simple",
                            format!("{node} {prefix} route {route:?} uses non-link {}–{}", w[0], w[1]),
                        ));
                    }
                }
            }
            TraceEvent::NeighborDown {
                t,
                node,
                neighbor,
                last_heard,
            } if t - last_heard > bound_us => {
                out.push(v(
                    "keepalive_bound",
                    format!("{node} disabled {neighbor} at {t}, last heard {last_heard}"),
                ));
            }
            TraceEvent::Decision {
                node,
                name,
                mode,
                named_next_alive,
                enabled_hop,
                action,
                ..
            } => {
                let bad = match mode.as_str() {
                    "min_cost" => *named_next_alive,
                    "rediscovery" => *enabled_hop,
                    "source_routed" => action.starts_with("forward") && !named_next_alive,
                    _ => false,
                };
                if bad {
                    out.push(v(
                        "strategy_precedence",
                        format!("{node} chose {mode} for {name} (named alive={named_next_alive}, enabled hop={enabled_hop})"),
                    ));
                }
            }
            _ => {}
        }
    }

    out.extend(keepalive_detection(scenario, trace, bound_us));

    match audit_log(ledger) {
        Ok(s) if s.final_total != s.minted => out.push(v(
            "token_conservation",
            format!("final total {} differs from minted {}", s.final_total, s.minted),
        )),
        Ok(_) => {}
        Err(e) => out.push(v("token_conservation", e)),
    }
    out
}

/// Every link that stays down longer than the detection bound must be seen
/// as dead from both ends within the bound.
fn keepalive_detection(scenario: &Scenario, trace: &[TraceEvent], bound_us: u64) -> Vec<Violation> {
    let end_us = scenario.duration_ms * 1_000;
    let mut downs: Vec<(u64, String, String)> = Vec::new();
    for s in &scenario.schedule {
        if let ScheduleEntry::LinkDown { at_ms, a, b } = s {
            downs.push((at_ms * 1_000, a.clone(), b.clone()));
        }
    }
    let mut out = Vec::new();
    for (t_down, a, b) in downs {
        let restored = scenario.schedule.iter().find_map(|s| match s {
            ScheduleEntry::LinkUp { at_ms, a: x, b: y } if at_ms * 1_000 > t_down && pair(x, y) == pair(&a, &b) => {
                Some(at_ms * 1_000)
            }
            _ => None,
        });
        let deadline = t_down + bound_us;
        if restored.unwrap_or(u64::MAX) <= deadline || deadline > end_us {
            continue;
        }
        for (node, nb) in [(&a, &b), (&b, &a)] {
            let seen = trace.iter().any(|e| {
                matches!(e, TraceEvent::NeighborDown { t, node: n, neighbor, .. }
                    if n == node && neighbor == nb && *t >= t_down && *t <= deadline)
            });
            let already_dead = trace.iter().rev().find_map(|e| match e {
                TraceEvent::NeighborDown {
                    t, node: n, neighbor, ..
                } if n == node && neighbor == nb && *t < t_down => Some(true),
                TraceEvent::NeighborUp { t, node: n, neighbor } if n == node && neighbor == nb && *t < t_down => {
                    Some(false)
                }
                _ => None,
            });
            if !seen && already_dead != Some(true) {
                out.push(v(
                    "keepalive_bound",
                    format!("{node} did not disable {nb} within {bound_us} us of link down at {t_down}"),
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario::from_toml_str(
            r#"
version = 1
name = "t"
seed = 1
duration_ms = 2000
[[node]]
name = "A"
addr = "00-00-00-00-00-01"
[[node]]
name = "B"
addr = "00-00-00-00-00-02"
cost = 3
[[node]]
name = "C"
addr = "00-00-00-00-00-03"
cost = 12
[[link]]
a = "A"
b = "B"
latency_ms = 1
[[link]]
a = "B"
b = "C"
latency_ms = 1
[[schedule]]
at_ms = 500
action = "link_down"
a = "B"
b = "C"
"#,
        )
        .unwrap()
    }

    fn down(t: u64, node: &str, nb: &str, last: u64) -> TraceEvent {
        TraceEvent::NeighborDown {
            t,
            node: node.into(),
            neighbor: nb.into(),
            last_heard: last,
        }
    }

    fn rules(vs: &[Violation]) -> Vec<&str> {
        vs.iter().map(|v| v.rule.as_str()).collect()
    }

    #[test]
    fn clean_trace_passes() {
        let trace = vec![
            TraceEvent::Path {
                t: 10,
                node: "A".into(),
                prefix: "/v".into(),
                route: vec!["A".into(), "B".into(), "C".into()],
                price: 15,
            },
            down(800_000, "B", "C", 450_000),
            down(800_000, "C", "B", 450_000),
        ];
        assert!(audit(&scenario(), &trace, &[]).is_empty());
    }

    #[test]
    fn each_rule_fires() {
        let trace = vec![
            TraceEvent::Send {
                t: 0,
                node: "B".into(),
                to: "A".into(),
                kind: "data".into(),
                name: "/v/0#0".into(),
                bytes: 10,
                broadcast: true,
                arrive: 5,
            },
            TraceEvent::Recv {
                t: 4,
                node: "A".into(),
                from: "B".into(),
                kind: "data".into(),
                name: "/v/0#0".into(),
                sent: 0,
                latency_us: 1000,
            },
            TraceEvent::Path {
                t: 10,
                node: "A".into(),
                prefix: "/v".into(),
                route: vec!["A".into(), "C".into(), "A".into()],
                price: 14,
            },
            TraceEvent::Decision {
                t: 20,
                node: "B".into(),
                name: "/v/0#0".into(),
                mode: "min_cost".into(),
                action: "forward C".into(),
                named_next: Some("C".into()),
                named_next_alive: true,
                enabled_hop: true,
            },
            down(900_000, "B", "C", 450_000),
        ];
        let vs = audit(&scenario(), &trace, &[]);
        let got = rules(&vs);
        for r in [
            "content_broadcast",
            "causality",
            "price_additivity",
            "route_simple",
            "strategy_precedence",
            "keepalive_bound",
        ] {
            assert!(got.contains(&r), "{r} missing from {got:?}");
        }
    }

    #[test]
    fn forged_ledger_fails_conservation() {
        let recs = vec![
            LedgerRecord::Genesis {
                owner: "00-00-00-00-00-01".into(),
                balance: 10,
            },
            LedgerRecord::Open {
                channel: 0,
                party_a: "00-00-00-00-00-01".into(),
                party_b: "00-00-00-00-00-01".into(),
                deposit_a: 10,
                deposit_b: 0,
            },
            LedgerRecord::Settle {
                channel: 0,
                sequence: 1,
                balance_a: 10,
                balance_b: 5,
            },
        ];
        let trace = vec![down(800_000, "B", "C", 450_000), down(800_000, "C", "B", 450_000)];
        assert_eq!(rules(&audit(&scenario(), &trace, &recs)), vec!["token_conservation"]);
    }
}
