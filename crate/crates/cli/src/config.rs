//! `--config PATH` support: each `key=value` line becomes `--key value`,
//! spliced in right after the subcommand so flags given on the command line
//! (which come later) override it.

use std::fs;

fn split_config_flag(argv: &[String]) -> Result<(Vec<String>, Option<String>), String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let p = it.next().ok_or("--config needs a path")?;
            path = Some(p.clone());
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a.clone());
        }
    }
    Ok((rest, path))
}

pub fn parse_config(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", no + 1))?;
        let key = k.trim().replace('_', "-");
        match v.trim() {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            v => {
                out.push(format!("--{key}"));
                out.push(v.to_string());
            }
        }
    }
    Ok(out)
}

pub fn inject(argv: Vec<String>) -> Result<Vec<String>, String> {
    let (mut rest, path) = split_config_flag(&argv)?;
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let extra = parse_config(&text)?;
    // program name, then the subcommand, then config flags
    let at = rest
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map_or(rest.len(), |i| i + 2);
    rest.splice(at..at, extra);
    Ok(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(args: &[&str]) -> Vec<String> {
        args.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_key_values() {
        let got = parse_config("# c\nsteps = 50\nno_threshold=true\nverbose=false\n").unwrap();
        assert_eq!(got, v(&["--steps", "50", "--no-threshold"]));
        assert!(parse_config("oops").is_err());
    }

    #[test]
    fn config_goes_after_subcommand_and_before_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "steps=5\n").unwrap();
        let p = path.to_str().unwrap();
        let got = inject(v(&["bin", "train", "--config", p, "--steps", "9"])).unwrap();
        assert_eq!(got, v(&["bin", "train", "--steps", "5", "--steps", "9"]));
        let got = inject(v(&["bin", "--config", p, "train"])).unwrap();
        assert_eq!(got, v(&["bin", "train", "--steps", "5"]));
    }

    #[test]
    fn without_config_argv_is_untouched() {
        let a = v(&["bin", "info", "--ckpt", "x"]);
        assert_eq!(inject(a.clone()).unwrap(), a);
    }
}
