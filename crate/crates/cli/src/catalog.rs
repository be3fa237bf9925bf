//! Attack and metric catalog, rendered from the registries themselves so the
//! documentation cannot drift from the code.

use std::fmt::Write as _;

use robench::attacks::{defaults, AttackKind};
use robench::metrics::metric_names;
use serde::Serialize;

#[derive(Serialize)]
pub struct AttackEntry {
    pub kind: &'static str,
    pub summary: &'static str,
    pub universal: bool,
    pub iterative: bool,
    pub extra: Vec<(&'static str, &'static str)>,
}

#[derive(Serialize)]
pub struct Catalog {
    pub attacks: Vec<AttackEntry>,
    pub metrics: Vec<&'static str>,
    pub defaults: Defaults,
}

#[derive(Serialize)]
pub struct Defaults {
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    pub momentum: f64,
    pub amplitudes: [f64; 3],
}

pub fn catalog() -> Catalog {
    Catalog {
        attacks: AttackKind::ALL
            .into_iter()
            .map(|k| AttackEntry {
                kind: k.as_str(),
                summary: k.summary(),
                universal: k.is_uap(),
                iterative: k.is_iterative(),
                extra: k.extra_keys().to_vec(),
            })
            .collect(),
        metrics: metric_names(),
        defaults: Defaults {
            epsilon: defaults::epsilon(),
            alpha: defaults::alpha(),
            iterations: defaults::iterations(),
            momentum: defaults::momentum(),
            amplitudes: defaults::AMPLITUDES,
        },
    }
}

/// The attack catalog as Markdown; `docs/attacks.md` is this output.
pub fn markdown() -> String {
    let c = catalog();
    let mut s = String::new();
    let _ = writeln!(s, "# Attack catalog\n");
    let _ = writeln!(s, "Generated by `robench catalog`; do not edit by hand.\n");
    let d = &c.defaults;
    let _ = writeln!(
        s,
        "Shared attack fields and defaults: `epsilon` = {} (4/255), `alpha` = {} (1/255), `iterations` = {}, \
         `momentum` = {}, `seed` = 0. Universal perturbations are evaluated at amplitudes {:?} unless \
         `amplitudes` is set.\n",
        d.epsilon, d.alpha, d.iterations, d.momentum, d.amplitudes
    );
    let _ = writeln!(s, "| kind | universal | iterative | description |");
    let _ = writeln!(s, "|---|---|---|---|");
    for a in &c.attacks {
        let _ = writeln!(s, "| `{}` | {} | {} | {} |", a.kind, yes(a.universal), yes(a.iterative), a.summary);
    }
    for a in c.attacks.iter().filter(|a| !a.extra.is_empty()) {
        let _ = writeln!(s, "\n## `{}` extra keys\n", a.kind);
        let _ = writeln!(s, "| key | default |");
        let _ = writeln!(s, "|---|---|");
        for (k, v) in &a.extra {
            let _ = writeln!(s, "| `{k}` | `{}` |", v.replace('|', "\\|"));
        }
    }
    let _ = writeln!(s, "\n## Registered metrics\n");
    for m in &c.metrics {
        let _ = writeln!(s, "- `{m}`");
    }
    s
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// The manual page, rendered from the command-line definition and the
/// catalog; `docs/robench.md` is this output.
pub fn manual(mut cmd: clap::Command) -> String {
    let mut s = String::new();
    let name = cmd.get_name().to_string();
    let _ = writeln!(s, "# {name}(1)\n");
    let _ = writeln!(s, "Generated by `robench catalog --format man`; do not edit by hand.\n");
    let _ = writeln!(s, "## NAME\n\n{name} - {}\n", cmd.get_about().map(|a| a.to_string()).unwrap_or_default());
    let _ = writeln!(s, "## SYNOPSIS\n\n```\n{}\n```\n", plain_usage(&mut cmd));
    if let Some(long) = cmd.get_long_about() {
        let _ = writeln!(s, "## DESCRIPTION\n\n{long}\n");
    }
    let _ = writeln!(s, "## GLOBAL OPTIONS\n");
    args(&mut s, &cmd);
    let _ = writeln!(s, "## COMMANDS\n");
    for sub in cmd.get_subcommands_mut().filter(|c| c.get_name() != "help") {
        let _ = writeln!(s, "### {}\n", sub.get_name());
        if let Some(about) = sub.get_long_about().or(sub.get_about()) {
            let _ = writeln!(s, "{about}\n");
        }
        let _ = writeln!(s, "```\n{} {}\n```\n", name, plain_usage(sub).trim_start_matches("Usage: "));
        args(&mut s, sub);
    }
    let _ = writeln!(s, "## EXIT STATUS\n");
    let _ = writeln!(s, "- `0`: every selected job is done, or the command succeeded.");
    let _ = writeln!(s, "- `2`: configuration error; the JSON on stdout names the offending key.");
    let _ = writeln!(s, "- `3`: partial failure: failed or pending jobs, unreadable inputs, or an incomplete report.\n");
    let _ = writeln!(s, "## ENVIRONMENT\n");
    let _ = writeln!(s, "- `ROBENCH_OUTPUT_DIR`: overrides `run.output_dir`.");
    let _ = writeln!(s, "- `ROBENCH_DATA_DIR`: overrides `run.data_dir`.");
    let _ = writeln!(s, "- `ROBENCH_WORKERS`: overrides `run.workers`.");
    let _ = writeln!(s, "- `RUST_LOG`: log filter for stderr (`-v` and `-q` set the default).\n");
    let _ = writeln!(s, "## ATTACKS\n");
    let _ = writeln!(s, "| kind | universal | iterative | description |");
    let _ = writeln!(s, "|---|---|---|---|");
    for a in catalog().attacks {
        let _ = writeln!(s, "| `{}` | {} | {} | {} |", a.kind, yes(a.universal), yes(a.iterative), a.summary);
    }
    let _ = writeln!(s, "\n## SEE ALSO\n");
    let _ = writeln!(s, "`docs/attacks.md`, `docs/config.md`, `docs/metrics.md`, `docs/reproduce.md`");
    s
}

fn plain_usage(cmd: &mut clap::Command) -> String {
    cmd.render_usage().to_string().trim_start_matches("Usage: ").to_string()
}

fn args(s: &mut String, cmd: &clap::Command) {
    let mut any = false;
    for a in cmd.get_arguments().filter(|a| !a.is_hide_set() && !(a.is_global_set() && cmd.get_name() != "robench")) {
        let id = a.get_id().as_str();
        if id == "help" || id == "version" {
            continue;
        }
        let value = match a.get_value_names() {
            Some(names) => names.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" "),
            None => id.to_uppercase().replace('_', "-"),
        };
        let takes = a.get_action().takes_values();
        let mut flag = match (a.get_long(), a.get_short()) {
            (Some(l), Some(c)) => format!("-{c}, --{l}"),
            (Some(l), None) => format!("--{l}"),
            (None, Some(c)) => format!("-{c}"),
            (None, None) => format!("<{value}>"),
        };
        if takes && (a.get_long().is_some() || a.get_short().is_some()) {
            flag = format!("{flag} <{value}>");
        }
        let values: Vec<String> = a.get_possible_values().iter().map(|v| v.get_name().to_string()).collect();
        let help = a.get_help().map(|h| h.to_string()).unwrap_or_default();
        let _ = write!(s, "- `{flag}`: {help}");
        if !values.is_empty() {
            let _ = write!(s, " (one of: {})", values.join(", "));
        }
        let _ = writeln!(s);
        any = true;
    }
    if any {
        let _ = writeln!(s);
    }
}
