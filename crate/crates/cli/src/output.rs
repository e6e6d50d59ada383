//! Artifact writing.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Writes `bytes` to a hidden sibling file, syncs it and renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "artifact path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// A matplotlib script that plots whichever reports were written next to it.
pub fn plot_script(artifacts: &[PathBuf]) -> String {
    let has = |name: &str| artifacts.iter().any(|p| p.as_os_str() == name);
    let mut s = String::from(
        "#!/usr/bin/env python3\n\
         \"\"\"Plots the CSV reports of one memvisco run. Usage: python3 plot.py\"\"\"\n\
         import csv\n\
         import os\n\
         import matplotlib\n\
         matplotlib.use(\"Agg\")\n\
         import matplotlib.pyplot as plt\n\
         \n\
         HERE = os.path.dirname(os.path.abspath(__file__))\n\
         \n\
         \n\
         def load(name):\n\
         \x20   with open(os.path.join(HERE, name)) as f:\n\
         \x20       rows = list(csv.DictReader(f))\n\
         \x20   return {k: [float(r[k]) if r[k] else float(\"nan\") for r in rows] for k in rows[0]}\n\
         \n",
    );
    if has("ledger.csv") {
        s.push_str(
            "\nd = load(\"ledger.csv\")\n\
             fig, ax = plt.subplots()\n\
             for key in (\"kinetic\", \"elastic\", \"memory\", \"stored\"):\n\
             \x20   ax.plot(d[\"t\"], d[key], label=key)\n\
             ax.set_xlabel(\"t\")\n\
             ax.set_ylabel(\"energy\")\n\
             ax.legend()\n\
             fig.savefig(os.path.join(HERE, \"energy.png\"), dpi=120)\n",
        );
    }
    if has("bound.csv") {
        s.push_str(
            "\nd = load(\"bound.csv\")\n\
             fig, ax = plt.subplots()\n\
             ax.plot(d[\"step\"], d[\"energy\"], label=\"energy\")\n\
             ax.plot(d[\"step\"], d[\"bound\"], label=\"bound\")\n\
             ax.set_xlabel(\"step\")\n\
             ax.legend()\n\
             fig.savefig(os.path.join(HERE, \"bound.png\"), dpi=120)\n",
        );
    }
    if has("convergence.csv") {
        s.push_str(
            "\nd = load(\"convergence.csv\")\n\
             pairs = [(e, x) for e, x in zip(d[\"eps\"], d[\"d_h\"]) if x == x]\n\
             fig, ax = plt.subplots()\n\
             ax.loglog([p[0] for p in pairs], [p[1] for p in pairs], \"o-\", label=\"d_h\")\n\
             ax.loglog(d[\"eps\"], d[\"kernel_sup\"], \"s--\", label=\"sup |K^eps - K|\")\n\
             ax.set_xlabel(\"eps\")\n\
             ax.legend()\n\
             fig.savefig(os.path.join(HERE, \"convergence.png\"), dpi=120)\n",
        );
    }
    if has("stress.csv") {
        s.push_str(
            "\nd = load(\"stress.csv\")\n\
             fig, ax = plt.subplots()\n\
             ax.plot(d[\"t\"], d[\"stress\"], \"o\", label=\"computed\")\n\
             ax.plot(d[\"t\"], d[\"expected\"], \"-\", label=\"closed form\")\n\
             ax.set_xlabel(\"t\")\n\
             ax.legend()\n\
             fig.savefig(os.path.join(HERE, \"stress.png\"), dpi=120)\n",
        );
    }
    if has("admissibility.csv") {
        s.push_str(
            "\nd = load(\"admissibility.csv\")\n\
             fig, ax = plt.subplots()\n\
             ax.loglog(d[\"t\"], d[\"g\"], label=\"G\")\n\
             ax.loglog(d[\"t\"], [-x for x in d[\"g_dot\"]], label=\"-G'\")\n\
             ax.set_xlabel(\"t\")\n\
             ax.legend()\n\
             fig.savefig(os.path.join(HERE, \"kernel.png\"), dpi=120)\n",
        );
    }
    s
}
