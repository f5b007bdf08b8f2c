use std::path::Path;

use coe_server::ServerConfig;

#[test]
fn shipped_example_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/example.toml");
    let config = ServerConfig::load(&path).unwrap();
    assert_eq!(config.port, 8080);
    assert_eq!(config.turn_limit, 6);
    assert_eq!(config.gateway.model, "gpt-3.5-turbo");
    assert_eq!(config.gateway.temperature, 0.0);
    assert!(config.state_dir.unwrap().ends_with("coe-state"));
}
