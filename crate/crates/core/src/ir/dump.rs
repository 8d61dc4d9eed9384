use std::fmt::Write;

use super::{Constant, Index, IrFunction, IrModule, NodeId, NodeKind, ScalarKind, UnaryOp};

/// Render a scalar constant's bits as a literal.
pub fn scalar_literal(k: ScalarKind, bits: u64) -> String {
    match k {
        ScalarKind::Bool => (bits != 0).to_string(),
        ScalarKind::F32 => format!("{:?}", f32::from_bits(bits as u32)),
        ScalarKind::F64 => format!("{:?}", f64::from_bits(bits)),
        _ if k.is_signed() => (bits as i64).to_string(),
        _ => bits.to_string(),
    }
}

fn index_text(indices: &[Index]) -> String {
    let parts: Vec<String> = indices
        .iter()
        .map(|i| match i {
            Index::Field(k) => format!(".{k}"),
            Index::Variant(k) => format!("#{k}"),
            Index::Position(ps) => {
                let ps: Vec<String> = ps.iter().map(|p| p.to_string()).collect();
                format!("[{}]", ps.join(", "))
            }
        })
        .collect();
    parts.join("")
}

/// Kind name with static operands, e.g. `fork<4, n/4>` or `binary.add`.
pub fn kind_text(f: &IrFunction, k: &NodeKind) -> String {
    let dcs = |v: &[super::DynConst]| v.iter().map(|d| f.dc_display(d)).collect::<Vec<_>>().join(", ");
    match k {
        NodeKind::Projection { index, .. } => format!("proj.{index}"),
        NodeKind::Fork { factors, .. } => format!("fork<{}>", dcs(factors)),
        NodeKind::ThreadId { dim, .. } => format!("thread_id.{dim}"),
        NodeKind::Parameter { index } => format!("param.{index}"),
        NodeKind::Constant(Constant::Scalar(sk, bits)) => format!("constant<{}>", scalar_literal(*sk, *bits)),
        NodeKind::Constant(Constant::Zero(_)) => "constant<zero>".to_string(),
        NodeKind::DynamicConstant(d) => format!("dyn_const<{}>", f.dc_display(d)),
        NodeKind::Binary { op, .. } => format!("binary.{}", op.name()),
        NodeKind::Unary { op, .. } => match op {
            UnaryOp::Neg => "unary.neg".into(),
            UnaryOp::Not => "unary.not".into(),
            UnaryOp::Cast(t) => format!("cast.{}", t.name()),
        },
        NodeKind::Read { indices, .. } => format!("read<{}>", index_text(indices)),
        NodeKind::Write { indices, .. } => format!("write<{}>", index_text(indices)),
        NodeKind::Call { callee, dyn_args, .. } => format!("call<@{}; {}>", callee.0, dcs(dyn_args)),
        _ => k.name().to_string(),
    }
}

pub fn node_line(f: &IrFunction, id: NodeId) -> String {
    let n = f.node(id);
    let inputs: Vec<String> = match &n.kind {
        // index inputs are already shown inside the kind
        NodeKind::Read { collection, .. } => vec![collection.to_string()],
        NodeKind::Write { collection, value, .. } => vec![collection.to_string(), value.to_string()],
        k => k.inputs().iter().map(|i| i.to_string()).collect(),
    };
    let mut s = format!("{} = {}({}) : {}", id, kind_text(f, &n.kind), inputs.join(", "), f.type_display(&n.ty));
    if !n.attrs.is_empty() {
        let a: Vec<&str> = n.attrs.iter().map(|a| a.name()).collect();
        write!(s, " [{}]", a.join(", ")).unwrap();
    }
    if !n.labels.is_empty() {
        let l: Vec<&str> = n.labels.iter().map(String::as_str).collect();
        write!(s, " [{}]", l.join(", ")).unwrap();
    }
    s
}

pub fn dump_function(f: &IrFunction) -> String {
    let params: Vec<String> = f.param_types.iter().map(|t| f.type_display(t)).collect();
    let mut s = format!(
        "fn {}{}<{}>({}) -> {} [{}]\n",
        if f.entry { "#[entry] " } else { "" },
        f.name,
        f.dc_params.join(", "),
        params.join(", "),
        f.type_display(&f.return_type),
        f.device.name()
    );
    for c in &f.constraints {
        writeln!(s, "  requires {} | {} ({})", f.dc_display(&c.divisor), f.dc_display(&c.dividend), c.origin).unwrap();
    }
    for id in f.live_ids() {
        writeln!(s, "  {}", node_line(f, id)).unwrap();
    }
    s
}

pub fn dump_module(m: &IrModule) -> String {
    let mut s = String::new();
    for (i, f) in m.functions.iter().enumerate() {
        write!(s, "@{i} ").unwrap();
        s.push_str(&dump_function(f));
        s.push('\n');
    }
    s
}
