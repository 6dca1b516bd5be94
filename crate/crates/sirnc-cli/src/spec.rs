//! Flat key-value run specs.
//!
//! Format: one `key = value` per line, `#` starts a comment, blank lines
//! ignored. An optional `command = <name>` line must match the subcommand
//! being run. Unknown keys are rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

/// One parameter: name, default (as written), one-line description.
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, doc: &'static str) -> Key {
    Key { name, default, doc }
}

/// A command's complete parameter schema.
pub struct Schema {
    pub command: &'static str,
    pub keys: &'static [Key],
}

/// Parameters resolved against a schema: defaults, then spec-file overrides.
pub struct RunSpec {
    command: &'static str,
    values: BTreeMap<String, String>,
}

impl RunSpec {
    pub fn resolve(schema: &Schema, path: Option<&Path>) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = schema
            .keys
            .iter()
            .map(|k| (k.name.to_string(), k.default.to_string()))
            .collect();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Spec(format!("cannot read spec {}: {e}", path.display())))?;
            for (line_no, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(CliError::Spec(format!(
                        "{}:{}: expected `key = value`, got `{raw}`",
                        path.display(),
                        line_no + 1
                    )));
                };
                let (k, v) = (k.trim(), v.trim());
                if k == "command" {
                    if v != schema.command {
                        return Err(CliError::Spec(format!(
                            "spec file is for `{v}`, but the `{}` command is running",
                            schema.command
                        )));
                    }
                    continue;
                }
                if !values.contains_key(k) {
                    return Err(CliError::Spec(format!(
                        "unknown key `{k}` for `{}`; valid keys:\n  {}",
                        schema.command,
                        schema
                            .keys
                            .iter()
                            .map(|k| format!("{} (default {}): {}", k.name, k.default, k.doc))
                            .collect::<Vec<_>>()
                            .join("\n  ")
                    )));
                }
                values.insert(k.to_string(), v.to_string());
            }
        }
        Ok(Self { command: schema.command, values })
    }

    /// Applies the global `--step` override when the schema has a `step` key.
    pub fn override_step(&mut self, step: Option<f64>) {
        if let Some(step) = step {
            if self.values.contains_key("step") {
                self.values.insert("step".into(), format!("{step}"));
            }
        }
    }

    pub fn command(&self) -> &str {
        self.command
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key `{key}` missing from the `{}` schema", self.command))
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        let raw = self.raw(key);
        parse_number(raw)
            .ok_or_else(|| CliError::Spec(format!("key `{key}`: expected a number, got `{raw}`")))
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| CliError::Spec(format!("key `{key}`: expected an integer, got `{raw}`")))
    }

    pub fn choice(&self, key: &str, allowed: &[&str]) -> Result<String, CliError> {
        let raw = self.raw(key);
        if allowed.contains(&raw) {
            Ok(raw.to_string())
        } else {
            Err(CliError::Spec(format!(
                "key `{key}`: expected one of {allowed:?}, got `{raw}`"
            )))
        }
    }

    /// Resolved parameters for the manifest header.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Accepts plain floats plus simple fractions like `1/15`.
fn parse_number(raw: &str) -> Option<f64> {
    if let Ok(v) = raw.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let (num, den) = raw.split_once('/')?;
    let num: f64 = num.trim().parse().ok()?;
    let den: f64 = den.trim().parse().ok()?;
    (den != 0.0).then(|| num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: Schema = Schema {
        command: "demo",
        keys: &[key("lambda", "0.25", "infection rate"), key("t_end", "150", "horizon")],
    };

    #[test]
    fn defaults_apply() {
        let spec = RunSpec::resolve(&SCHEMA, None).unwrap();
        assert_eq!(spec.f64("lambda").unwrap(), 0.25);
        assert_eq!(spec.usize("t_end").unwrap(), 150);
    }

    #[test]
    fn file_overrides_and_rejects_unknowns() {
        let dir = std::env::temp_dir().join("sirnc_spec_test");
        std::fs::create_dir_all(&dir).unwrap();
        let good = dir.join("good.spec");
        std::fs::write(&good, "# comment\ncommand = demo\nlambda = 1/15\n").unwrap();
        let spec = RunSpec::resolve(&SCHEMA, Some(&good)).unwrap();
        assert!((spec.f64("lambda").unwrap() - 1.0 / 15.0).abs() < 1e-15);

        let bad = dir.join("bad.spec");
        std::fs::write(&bad, "lambd = 0.3\n").unwrap();
        assert!(matches!(RunSpec::resolve(&SCHEMA, Some(&bad)), Err(CliError::Spec(_))));

        let wrong_cmd = dir.join("wrong.spec");
        std::fs::write(&wrong_cmd, "command = other\n").unwrap();
        assert!(matches!(RunSpec::resolve(&SCHEMA, Some(&wrong_cmd)), Err(CliError::Spec(_))));
    }

    #[test]
    fn fraction_parsing() {
        assert_eq!(parse_number("3/16"), Some(0.1875));
        assert_eq!(parse_number("0.5"), Some(0.5));
        assert_eq!(parse_number("x"), None);
        assert_eq!(parse_number("1/0"), None);
    }
}
