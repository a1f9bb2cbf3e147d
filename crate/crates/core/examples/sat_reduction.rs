//! Deciding and counting a small CNF through tokenization: the most likely
//! tokenization clears a threshold iff the formula is satisfiable, and the
//! marginal probability encodes the number of models.

use tokspace::exact::exact_summary;
use tokspace::hardness::{build_marginal, build_most_likely, CnfFormula};
use tokspace::Conditioning;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dimacs = "p cnf 4 4\n1 2 0\n-1 3 0\n-3 -4 0\n2 4 -1 0\n";
    let cnf = CnfFormula::parse_dimacs(dimacs)?;
    println!("formula: {cnf}");

    let inst = build_most_likely(&cnf);
    println!("string: {:?}", inst.text);
    let s = exact_summary(&inst.model, &inst.mdd(), &Conditioning::default(), 1 << 12)?;
    let sat = s.best.logprob > inst.log_threshold();
    println!(
        "most likely {:.6} vs threshold {:.6}: {}",
        s.best.logprob,
        inst.log_threshold(),
        if sat { "SAT" } else { "UNSAT" }
    );
    if sat {
        let a = inst.assignment_of(&s.best.ids);
        println!("assignment {a:?} satisfies: {}", cnf.satisfied_by(&a));
    }

    let inst = build_marginal(&cnf);
    let s = exact_summary(&inst.model, &inst.mdd(), &Conditioning::default(), 1 << 12)?;
    println!(
        "marginal {:.6} -> {} models (truth table: {})",
        s.marginal,
        inst.recover_count(s.marginal)?,
        cnf.brute_force_count()?
    );
    Ok(())
}
