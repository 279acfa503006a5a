use tsac::experiment::TraceRow;

/// Expected iterates of the pinned three-step trace.
pub fn frozen_trace() -> Vec<TraceRow> {
    // Step 0 by hand: theta = 0 gives pi = (1/2, 1/2); u = 0.2 picks a = 0 and
    // u = 0.95 moves to s' = 1. delta = 1 - 0 + 0 - 0 = 1, eta = 0.9 * 1,
    // omega = 0.8 * 1 * 1, theta = 0.5 * 1 * (psi(0,0) - (psi(0,0) + psi(0,1)) / 2).
    // Steps 1 and 2 were replayed with the same operation order in plain Python.
    vec![
        (0, 0, 1, 1.0, 1.0, 0.9, vec![0.8], vec![0.25, -0.25]),
        (1, 1, 0, 0.75, 1.05, 0.7976891317605481, vec![0.4816995210328164], vec![-0.028558181117348813, -0.289794025873907]),
        (0, 0, 0, 1.0, 0.20231086823945182, 0.9150202531530673, vec![0.5859938511595001], vec![-0.005793291149306559, -0.3125589158419493]),
    ]
}

/// Positions where `got` differs from the frozen trace in any bit.
pub fn trace_mismatches(got: &[TraceRow]) -> Vec<String> {
    let expected = frozen_trace();
    let mut out = Vec::new();
    if got.len() != expected.len() {
        out.push(format!("{} steps instead of {}", got.len(), expected.len()));
    }
    for (i, (g, e)) in got.iter().zip(&expected).enumerate() {
        if (g.0, g.1, g.2) != (e.0, e.1, e.2) {
            out.push(format!("indices at step {i}"));
        }
        let scalars = [("r", g.3, e.3), ("delta", g.4, e.4), ("eta", g.5, e.5)];
        for (name, x, y) in scalars {
            if x.to_bits() != y.to_bits() {
                out.push(format!("{name} at step {i}: {x} vs {y}"));
            }
        }
        let vectors = g.6.iter().zip(&e.6).chain(g.7.iter().zip(&e.7));
        if g.6.len() != e.6.len() || g.7.len() != e.7.len() || vectors.clone().any(|(x, y)| x.to_bits() != y.to_bits()) {
            out.push(format!("iterates at step {i}"));
        }
    }
    out
}
