use std::fmt::Write;

use super::dump::kind_text;
use super::{IrFunction, IrModule};

/* Control nodes are red and data nodes blue. Data edges are solid, control
 * edges dashed, and edges between a control and a data node dotted. */

pub fn function_dot(f: &IrFunction, cluster: usize) -> String {
    let mut s = String::new();
    writeln!(s, "  subgraph cluster_{cluster} {{").unwrap();
    writeln!(s, "    label=\"{}\";", f.name).unwrap();
    for id in f.live_ids() {
        let k = f.kind(id);
        let color = if k.is_control() { "red" } else { "blue" };
        let label = format!("{} {}", id, kind_text(f, k)).replace('"', "\\\"");
        writeln!(s, "    f{cluster}_{id} [label=\"{label}\", color={color}];").unwrap();
    }
    for id in f.live_ids() {
        let k = f.kind(id);
        for i in k.inputs() {
            let src_ctrl = f.kind(i).is_control();
            let style = match (src_ctrl, k.is_control()) {
                (true, true) => "dashed",
                (false, false) => "solid",
                _ => "dotted",
            };
            writeln!(s, "    f{cluster}_{i} -> f{cluster}_{id} [style={style}];").unwrap();
        }
    }
    writeln!(s, "  }}").unwrap();
    s
}

pub fn module_dot(m: &IrModule) -> String {
    let mut s = String::from("digraph module {\n");
    for (i, f) in m.functions.iter().enumerate() {
        s.push_str(&function_dot(f, i));
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::scheduled;

    const SUM: &str = "#[entry] fn sum<n>(a: i64[n]) -> i64 { let s: i64 = 0; for i in 0..n { s += a[i]; } return s; }";

    fn red(dot: &str) -> Vec<String> {
        dot.lines()
            .filter(|l| l.contains("color=red"))
            .map(|l| l.split('"').nth(1).unwrap().split(' ').nth(1).unwrap().to_string())
            .collect()
    }

    #[test]
    fn loop_has_one_region() {
        let (m, _) = scheduled(SUM, "").unwrap();
        let d = module_dot(&m);
        assert_eq!(red(&d).iter().filter(|k| *k == "region").count(), 1);
        assert!(d.starts_with("digraph"));
    }

    #[test]
    fn empty_function_is_start_and_return() {
        let (m, _) = scheduled("#[entry] fn k() -> i64 { return 1; }", "").unwrap();
        assert_eq!(red(&module_dot(&m)), ["start", "return"]);
    }

    #[test]
    fn forkify_replaces_the_loop_with_a_fork_join() {
        let (_, m) = scheduled(SUM, "forkify(*);").unwrap();
        let d = module_dot(&m);
        let r = red(&d);
        assert!(!r.iter().any(|k| k == "region" || k == "if"), "{r:?}");
        assert_eq!(r.iter().filter(|k| k.starts_with("fork")).count(), 1);
        assert_eq!(r.iter().filter(|k| k.starts_with("join")).count(), 1);
        assert!(d.contains("thread_id") || d.contains("tid"), "{d}");
        assert!(d.contains("reduce"));
    }
}
