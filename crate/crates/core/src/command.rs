//! Command templates for external tools (`{input}`, `{outdir}`, `{image}`).

use std::process::Command;

use crate::error::{Error, Result};

/// Splits a template on whitespace and substitutes `{name}` placeholders
/// inside each argument. Arguments may be wrapped in single or double quotes
/// to keep embedded spaces.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<Vec<String>> {
    let args = split_args(template)?;
    if args.is_empty() {
        return Err(Error::Config(format!("empty command template `{template}`")));
    }
    Ok(args
        .into_iter()
        .map(|mut arg| {
            for (k, v) in vars {
                arg = arg.replace(&format!("{{{k}}}"), v);
            }
            arg
        })
        .collect())
}

fn split_args(s: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut in_arg = false;
    for c in s.chars() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => cur.push(c),
            None if c == '"' || c == '\'' => {
                quote = Some(c);
                in_arg = true;
            }
            None if c.is_whitespace() => {
                if in_arg {
                    out.push(std::mem::take(&mut cur));
                    in_arg = false;
                }
            }
            None => {
                cur.push(c);
                in_arg = true;
            }
        }
    }
    if quote.is_some() {
        return Err(Error::Config(format!("unterminated quote in `{s}`")));
    }
    if in_arg {
        out.push(cur);
    }
    Ok(out)
}

/// Runs a rendered command and returns its stdout, mapping a spawn failure
/// or nonzero exit to [`Error::ExternalTool`] with the captured output.
pub fn run(tool: &str, argv: &[String]) -> Result<Vec<u8>> {
    let output = Command::new(&argv[0])
        .args(&argv[1..])
        .output()
        .map_err(|e| Error::ExternalTool {
            tool: tool.to_string(),
            status: "spawn failed".into(),
            output: format!("{}: {e}", argv[0]),
        })?;
    if !output.status.success() {
        let mut text = String::from_utf8_lossy(&output.stderr).into_owned();
        if text.trim().is_empty() {
            text = String::from_utf8_lossy(&output.stdout).into_owned();
        }
        return Err(Error::ExternalTool {
            tool: tool.to_string(),
            status: output.status.to_string(),
            output: text,
        });
    }
    Ok(output.stdout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_placeholders() {
        let argv = render(
            "ffmpeg -i {input} '{outdir}/frame_%06d.png'",
            &[("input", "a b.mp4"), ("outdir", "/tmp/x")],
        )
        .unwrap();
        assert_eq!(argv, ["ffmpeg", "-i", "a b.mp4", "/tmp/x/frame_%06d.png"]);
    }

    #[test]
    fn rejects_bad_templates() {
        assert!(render("   ", &[]).is_err());
        assert!(render("echo 'oops", &[]).is_err());
    }

    #[test]
    fn nonzero_exit_is_external_error() {
        let err = run("sh", &["sh".into(), "-c".into(), "echo boom >&2; exit 3".into()]).unwrap_err();
        match err {
            Error::ExternalTool { output, .. } => assert!(output.contains("boom")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
