//! Normalized index ranking of the bundled benchmark tables (mean metric
//! values of eight methods on two datasets), next to the published indices.
//!
//! cargo run --example rank_methods

use std::path::Path;

use amfusion::metrics::{parse_method_table, RankingTable};

const TABLES: [(&str, &str, &str); 2] = [
    ("benchmark_a", include_str!("../tests/data/benchmark_a.csv"), include_str!("../tests/data/benchmark_a_index.csv")),
    ("benchmark_b", include_str!("../tests/data/benchmark_b.csv"), include_str!("../tests/data/benchmark_b_index.csv")),
];

fn main() -> amfusion::Result<()> {
    for (name, table, index) in TABLES {
        let ranking = RankingTable::new(parse_method_table(table, Path::new(name))?)?;
        println!("== {name}");
        print!("{}", ranking.to_text());
        println!("{:<14} {:>9} {:>9} {:>9}", "method", "xi", "published", "diff");
        for line in index.lines().skip(1) {
            let (method, published) = line.split_once(',').expect("method,xi");
            let published: f64 = published.parse().expect("number");
            let xi = ranking.xi[method];
            println!("{method:<14} {xi:>9.4} {published:>9.4} {:>+9.4}", xi - published);
        }
        println!("order: {}\n", ranking.order().join(" > "));
    }
    Ok(())
}
