//! Print the default run configuration as TOML.
//!
//! cargo run --example default_config > run.toml

use unipcr::config::RunConfig;

fn main() {
    print!("{}", RunConfig::default().to_toml());
}
