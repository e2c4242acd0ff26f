//! OpenQASM 2.0 export of noise-injected sequences and a minimal parser for
//! re-ingestion checks.

use crate::error::{Error, Result};
use crate::noise::ArmaModel;
use crate::seed::SeedLineage;
use crate::sequences::PulseSequence;
use crate::sim::{closing_sign, TargetState};

/// One parsed single-qubit operation.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    U1(f64),
    U3(f64, f64, f64),
    X,
    Id,
    Measure,
}

impl Gate {
    /// Gates that implement a π rotation about x (either sign).
    pub fn is_x_type(&self) -> bool {
        match self {
            Gate::X => true,
            Gate::U3(theta, _, _) => (theta.abs() - std::f64::consts::PI).abs() < 1e-12,
            _ => false,
        }
    }
}

const HEADER: &str = "OPENQASM 2.0;\ninclude \"qelib1.inc\";\nqreg q[1];\ncreg c[1];\n";
const RX_PLUS_HALF: &str = "u3(pi/2,-pi/2,pi/2) q[0];";
const RX_MINUS_HALF: &str = "u3(pi/2,pi/2,-pi/2) q[0];";
const RX_MINUS_PI: &str = "u3(pi,pi/2,-pi/2) q[0];";

/// Emits one circuit: `R_x(π/2)` preparation, then per slot `u1(φ_j)` followed
/// by the slot gate (`x` for +π, `u3(pi,pi/2,-pi/2)` for −π, `id` otherwise),
/// the closing `R_x(±π/2)` and a measurement.
pub fn emit_circuit(seq: &PulseSequence, phases: &[f64], target: TargetState) -> Result<String> {
    if phases.len() != seq.n_slots {
        return Err(Error::TrajectoryTooShort { needed: seq.n_slots, got: phases.len() });
    }
    if let Some(p) = phases.iter().find(|p| !p.is_finite()) {
        return Err(Error::invalid(format!("non-finite phase {p}")));
    }
    let mut out = String::with_capacity(HEADER.len() + 40 * seq.n_slots);
    out.push_str(HEADER);
    out.push_str(RX_PLUS_HALF);
    out.push('\n');
    for (j, phi) in phases.iter().enumerate() {
        out.push_str(&format!("u1({phi:?}) q[0];\n"));
        let gate = match seq.pulse_at(j + 1) {
            Some(s) if s > 0 => "x q[0];",
            Some(_) => RX_MINUS_PI,
            None => "id q[0];",
        };
        out.push_str(gate);
        out.push('\n');
    }
    out.push_str(if closing_sign(seq, target) > 0.0 { RX_PLUS_HALF } else { RX_MINUS_HALF });
    out.push('\n');
    out.push_str("measure q[0] -> c[0];\n");
    Ok(out)
}

/// Injected slot phases of gate-mode trajectory `r`, drawn from the same
/// stream the simulator uses for that trajectory.
pub fn trajectory_phases(seq: &PulseSequence, model: &ArmaModel, seed: u64, r: usize) -> Result<Vec<f64>> {
    let lineage = SeedLineage::new(seed).child(seq.label as u64).child(r as u64).child(0);
    Ok(model.generate(seq.n_slots, &lineage)?.phases)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportedCircuit {
    pub label: usize,
    pub trajectory: usize,
    pub phases: Vec<f64>,
    pub text: String,
}

impl ExportedCircuit {
    pub fn file_name(&self) -> String {
        format!("seq{:03}_traj{:04}.qasm", self.label, self.trajectory)
    }
}

/// One circuit per (sequence, trajectory), each verified by re-parsing.
pub fn export_circuits(
    seqs: &[PulseSequence],
    model: &ArmaModel,
    trajectories: usize,
    target: TargetState,
    seed: u64,
) -> Result<Vec<ExportedCircuit>> {
    let mut out = Vec::with_capacity(seqs.len() * trajectories);
    for seq in seqs {
        if (model.sample_period() - seq.gate_period).abs() > 1e-12 * seq.gate_period {
            return Err(Error::invalid(format!(
                "model sample period {} s differs from gate period {} s",
                model.sample_period(),
                seq.gate_period
            )));
        }
        for r in 0..trajectories {
            let phases = trajectory_phases(seq, model, seed, r)?;
            let text = emit_circuit(seq, &phases, target)?;
            verify_circuit(&text, seq, &phases)?;
            out.push(ExportedCircuit { label: seq.label, trajectory: r, phases, text });
        }
    }
    Ok(out)
}

/// Parses the gate body of a single-qubit OpenQASM 2.0 circuit.
pub fn parse_circuit(text: &str) -> Result<Vec<Gate>> {
    let mut gates = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let perr = |message: String| Error::Parse { line: line_no, message };
        let line = raw.split("//").next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let stmt = line.strip_suffix(';').ok_or_else(|| perr("missing ';'".into()))?.trim();
        if stmt.starts_with("OPENQASM") || stmt.starts_with("include") || stmt.starts_with("qreg") || stmt.starts_with("creg")
        {
            continue;
        }
        if stmt.starts_with("measure") {
            gates.push(Gate::Measure);
            continue;
        }
        let (head, operand) = match stmt.rfind(' ') {
            Some(p) => (stmt[..p].trim(), stmt[p + 1..].trim()),
            None => return Err(perr(format!("malformed statement '{stmt}'"))),
        };
        if operand != "q[0]" {
            return Err(perr(format!("unsupported operand '{operand}'")));
        }
        let (name, args) = match head.find('(') {
            Some(p) => {
                let inner = head[p + 1..].strip_suffix(')').ok_or_else(|| perr("unbalanced parenthesis".into()))?;
                let args = split_args(inner)
                    .iter()
                    .map(|a| eval_expr(a).map_err(|m| perr(format!("bad angle '{a}': {m}"))))
                    .collect::<Result<Vec<f64>>>()?;
                (&head[..p], args)
            }
            None => (head, Vec::new()),
        };
        let gate = match (name, args.as_slice()) {
            ("u1", [a]) => Gate::U1(*a),
            ("u3", [t, p, l]) => Gate::U3(*t, *p, *l),
            ("x", []) => Gate::X,
            ("id", []) => Gate::Id,
            _ => return Err(perr(format!("unsupported gate '{head}'"))),
        };
        gates.push(gate);
    }
    Ok(gates)
}

fn split_args(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out
}

/// Evaluates an angle expression with `pi`, numbers, `+ - * /`, unary minus and parentheses.
pub fn eval_expr(s: &str) -> std::result::Result<f64, String> {
    let tokens = tokenize(s)?;
    let mut p = ExprParser { tokens, pos: 0 };
    let v = p.sum()?;
    if p.pos != p.tokens.len() {
        return Err("trailing input".into());
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Op(char),
}

fn tokenize(s: &str) -> std::result::Result<Vec<Tok>, String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if "+-*/()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '+' || d == '-') && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Tok::Num(text.parse().map_err(|_| format!("bad number '{text}'"))?));
        } else if chars[i..].starts_with(&['p', 'i']) {
            out.push(Tok::Num(std::f64::consts::PI));
            i += 2;
        } else {
            return Err(format!("unexpected character '{c}'"));
        }
    }
    Ok(out)
}

struct ExprParser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl ExprParser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn sum(&mut self) -> std::result::Result<f64, String> {
        let mut v = self.product()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let r = self.product()?;
            v = if c == '+' { v + r } else { v - r };
        }
        Ok(v)
    }

    fn product(&mut self) -> std::result::Result<f64, String> {
        let mut v = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let r = self.unary()?;
            v = if c == '*' { v * r } else { v / r };
        }
        Ok(v)
    }

    fn unary(&mut self) -> std::result::Result<f64, String> {
        match self.peek().cloned() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(v)
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let v = self.sum()?;
                if self.peek() != Some(&Tok::Op(')')) {
                    return Err("missing ')'".into());
                }
                self.pos += 1;
                Ok(v)
            }
            other => Err(format!("unexpected token {other:?}")),
        }
    }
}

/// Re-parses `text` and checks it against the sequence and slot phases:
/// `n_k` x-type gates, `N` phase gates, and each slot's phase reproduced exactly.
pub fn verify_circuit(text: &str, seq: &PulseSequence, phases: &[f64]) -> Result<()> {
    let gates = parse_circuit(text)?;
    let body: Vec<&Gate> = gates.iter().filter(|g| **g != Gate::Measure).collect();
    // preparation and closing rotations bracket the slot gates
    if body.len() != 2 * seq.n_slots + 2 {
        return Err(Error::invalid(format!("expected {} operations, found {}", 2 * seq.n_slots + 2, body.len())));
    }
    let slots = &body[1..body.len() - 1];
    let x_count = slots.iter().filter(|g| g.is_x_type()).count();
    if x_count != seq.n_pulses() {
        return Err(Error::invalid(format!("expected {} x-type gates, found {x_count}", seq.n_pulses())));
    }
    let u1: Vec<f64> = slots
        .iter()
        .filter_map(|g| match g {
            Gate::U1(a) => Some(*a),
            _ => None,
        })
        .collect();
    if u1.len() != seq.n_slots {
        return Err(Error::invalid(format!("expected {} phase gates, found {}", seq.n_slots, u1.len())));
    }
    for (j, (got, want)) in u1.iter().zip(phases).enumerate() {
        if got != want {
            return Err(Error::invalid(format!("slot {} phase {got} differs from {want}", j + 1)));
        }
    }
    if gates.last() != Some(&Gate::Measure) {
        return Err(Error::invalid("circuit must end with a measurement"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::{make_fttps, make_rfttps};

    const TG: f64 = 1e-7;

    #[test]
    fn expressions() {
        assert_eq!(eval_expr("pi/2").unwrap(), std::f64::consts::FRAC_PI_2);
        assert_eq!(eval_expr("-pi/2").unwrap(), -std::f64::consts::FRAC_PI_2);
        assert_eq!(eval_expr("2*pi").unwrap(), 2.0 * std::f64::consts::PI);
        assert_eq!(eval_expr("-1.5e-3").unwrap(), -1.5e-3);
        assert_eq!(eval_expr("(1+2)*3").unwrap(), 9.0);
        assert!(eval_expr("pi)").is_err());
        assert!(eval_expr("foo").is_err());
    }

    #[test]
    fn zero_noise_echo_free_circuit() {
        let seq = &make_fttps(1, 16, TG).unwrap()[0];
        let text = emit_circuit(seq, &[0.0; 16], TargetState::One).unwrap();
        let gates = parse_circuit(&text).unwrap();
        assert!(gates.iter().all(|g| !matches!(g, Gate::U1(a) if *a != 0.0)));
        assert_eq!(gates.iter().filter(|g| g.is_x_type()).count(), 0);
        assert_eq!(gates.last(), Some(&Gate::Measure));
    }

    #[test]
    fn gate_counts_and_angles_round_trip() {
        let model = ArmaModel::white(0.1, TG).unwrap();
        let seqs = make_fttps(3, 32, TG).unwrap();
        let c = export_circuits(&seqs[2..], &model, 1, TargetState::One, 4).unwrap();
        let gates = parse_circuit(&c[0].text).unwrap();
        assert_eq!(gates.iter().filter(|g| g.is_x_type()).count(), 2);
        let u1: Vec<f64> = gates.iter().filter_map(|g| if let Gate::U1(a) = g { Some(*a) } else { None }).collect();
        assert_eq!(u1, c[0].phases);
    }

    #[test]
    fn negative_pulses_use_u3() {
        let model = ArmaModel::white(0.05, TG).unwrap();
        let seqs = make_rfttps(6, 32, TG).unwrap();
        for c in export_circuits(&seqs, &model, 2, TargetState::Zero, 1).unwrap() {
            let seq = &seqs[c.label];
            let minus = seq.pulse_signs.iter().filter(|s| **s < 0).count();
            let gates = parse_circuit(&c.text).unwrap();
            let u3_pi = gates.iter().filter(|g| matches!(g, Gate::U3(t, _, _) if *t == std::f64::consts::PI)).count();
            assert_eq!(u3_pi, minus);
        }
    }

    #[test]
    fn phases_match_simulator_stream() {
        let model = ArmaModel::new(vec![0.5], vec![1.0], 0.1, TG).unwrap();
        let seq = &make_fttps(2, 16, TG).unwrap()[1];
        let a = trajectory_phases(seq, &model, 9, 3).unwrap();
        let lineage = SeedLineage::new(9).child(1).child(3).child(0);
        assert_eq!(a, model.generate(16, &lineage).unwrap().phases);
    }

    #[test]
    fn verification_catches_tampering() {
        let seq = &make_fttps(3, 8, TG).unwrap()[2];
        let phases = vec![0.125; 8];
        let text = emit_circuit(seq, &phases, TargetState::One).unwrap();
        assert!(verify_circuit(&text, seq, &phases).is_ok());
        let tampered = text.replacen("u1(0.125)", "u1(0.126)", 1);
        assert!(verify_circuit(&tampered, seq, &phases).is_err());
        let dropped = text.replacen("x q[0];\n", "id q[0];\n", 1);
        assert!(verify_circuit(&dropped, seq, &phases).is_err());
        assert!(matches!(parse_circuit("OPENQASM 2.0;\nfoo q[0];\n"), Err(Error::Parse { line: 2, .. })));
    }
}
