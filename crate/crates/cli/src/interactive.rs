use std::io::{BufRead, Write};

use shapkan::symbolic::{EdgeRef, FitChooser, SymbolicFit};
use shapkan::Result;

/// Shows the ranked fits of each edge and reads a 1-based choice per line.
/// An empty line or end of input accepts the top-ranked fit.
pub struct Prompt<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> Prompt<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }
}

impl<R: BufRead, W: Write> FitChooser for Prompt<R, W> {
    fn choose(&mut self, edge: EdgeRef, ranked: &[SymbolicFit]) -> Result<usize> {
        let out = &mut self.output;
        writeln!(out, "edge layer {} out {} in {}", edge.layer, edge.out, edge.inp)?;
        for (k, fit) in ranked.iter().enumerate() {
            writeln!(
                out,
                "  {:>2}. {:<5} r2={:.6} a={:.4} b={:.4} c={:.4} d={:.4}",
                k + 1,
                fit.primitive.name(),
                fit.r2,
                fit.a,
                fit.b,
                fit.c,
                fit.d
            )?;
        }
        loop {
            write!(out, "choice [1]: ")?;
            out.flush()?;
            let mut line = String::new();
            if self.input.read_line(&mut line)? == 0 {
                writeln!(out)?;
                return Ok(0);
            }
            let answer = line.trim();
            if answer.is_empty() {
                return Ok(0);
            }
            match answer.parse::<usize>() {
                Ok(k) if (1..=ranked.len()).contains(&k) => return Ok(k - 1),
                _ => writeln!(out, "invalid choice `{answer}`, expected 1..={}", ranked.len())?,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use shapkan::symbolic::Primitive;

    fn fits() -> Vec<SymbolicFit> {
        [Primitive::Square, Primitive::Identity]
            .into_iter()
            .map(|primitive| SymbolicFit {
                primitive,
                a: 1.0,
                b: 0.0,
                c: 1.0,
                d: 0.0,
                r2: 0.5,
            })
            .collect()
    }

    #[test]
    fn reads_choices_and_defaults() {
        let edge = EdgeRef { layer: 0, out: 0, inp: 1 };
        let mut out = Vec::new();
        let mut p = Prompt::new("9\n2\n\n".as_bytes(), &mut out);
        assert_eq!(p.choose(edge, &fits()).unwrap(), 1);
        assert_eq!(p.choose(edge, &fits()).unwrap(), 0);
        assert_eq!(p.choose(edge, &fits()).unwrap(), 0);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("invalid choice `9`, expected 1..=2"));
        assert!(text.starts_with("edge layer 0 out 0 in 1\n   1. x^2"));
    }
}
