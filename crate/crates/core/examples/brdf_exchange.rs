//! Writes a BRDF exchange file and diffs it against this implementation,
//! the same check `photostereo selfcheck-diff` runs on files produced
//! elsewhere.

use photostereo::selfcheck::{diff_exchange, generate_exchange, read_exchange, write_exchange};

fn main() -> photostereo::Result<()> {
    let path = std::env::temp_dir().join("brdf_exchange.json");
    write_exchange(&generate_exchange(1000, 42)?, &path)?;
    let report = diff_exchange(&read_exchange(&path)?, 1e-5)?;
    println!("{} points, max relative error {:.2e}, pass {}", report.points, report.max_rel_err, report.pass);
    Ok(())
}
