//! Lower bound on specular-to-diffuse variance over roughness and metallic sweeps.
//!
//! ```text
//! cargo run --release --example ratio_sweep
//! ```

use mcsde::variance::ratio_sweep;

fn main() -> anyhow::Result<()> {
    let alphas = [0.4, 0.2, 0.1, 0.05];
    let metallics = [0.0, 0.5, 0.9, 0.99];
    let rows = ratio_sweep(&alphas, &metallics, &[1.0], 0.04, 0.8, 1.0)?;
    print!("{:>8}", "alpha");
    for m in metallics {
        print!(" {:>12}", format!("m={m}"));
    }
    println!();
    for (k, a) in alphas.iter().enumerate() {
        print!("{a:>8}");
        for r in &rows[k * metallics.len()..(k + 1) * metallics.len()] {
            let mark = if r.converged() { ' ' } else { '*' };
            print!(" {:>11.3}{mark}", r.ratio_lower_bound);
        }
        println!();
    }
    println!("* quadrature did not converge");
    Ok(())
}
