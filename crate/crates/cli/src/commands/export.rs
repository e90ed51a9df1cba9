use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Result};
use qflow_core::active_space::ActiveSpace;
use qflow_core::cluster::AmplitudeStore;
use qflow_core::downfolding::{
    extract_store_from_cas, heff_perturbative, heff_ses_nonhermitian,
};
use qflow_core::fock::{SectorBasis, SpinOrbitalBasis};
use qflow_core::hamiltonian::build_matrix;
use qflow_core::integrals::serialize_synthetic;

use crate::commands::{load_store, resolve_format};
use crate::{qlog, ExportArgs};

pub fn execute(args: ExportArgs) -> Result<ExitCode> {
    let format = resolve_format(&args.input, args.format);
    let store = load_store(&args.input, format)?;
    let na = store.n_alpha()?;
    let nb = store.n_beta()?;
    let basis = SpinOrbitalBasis::new(store.n_orb, na, nb)?;

    // validate the space specification against the reference partition
    if args.occ.is_empty() || args.virt.is_empty() {
        bail!(qflow_core::Error::Config(
            "--occ and --virt must list at least one spatial orbital each".into()
        ));
    }
    for &p in &args.occ {
        if p >= na {
            bail!(qflow_core::Error::Config(format!(
                "orbital {p} is not reference-occupied (occupied are 0..{na})"
            )));
        }
    }
    for &p in &args.virt {
        if p < na || p >= store.n_orb {
            bail!(qflow_core::Error::Config(format!(
                "orbital {p} is not reference-virtual (virtuals are {na}..{})",
                store.n_orb
            )));
        }
    }
    let mut occ = args.occ.clone();
    let mut virt = args.virt.clone();
    occ.sort_unstable();
    occ.dedup();
    virt.sort_unstable();
    virt.dedup();
    let space = ActiveSpace::new(0, occ, virt)?;

    let sector = Arc::new(SectorBasis::for_sector(&basis, na, nb)?);
    let h = build_matrix(&store, sector)?;
    let heff = match args.order {
        0 => heff_ses_nonhermitian(&h, &AmplitudeStore::new(), &basis, &space)?,
        1 | 2 => heff_perturbative(&h, &store, &basis, &space, args.order)?.0,
        other => bail!(qflow_core::Error::Config(format!(
            "--order must be 0, 1 or 2, got {other}"
        ))),
    };
    let asym = qflow_core::oracle::asymmetry(&heff.matrix);
    let (extracted, residual) = extract_store_from_cas(&heff, &basis)?;
    qlog!(
        "export-heff: space {}, order {}, extraction residual {residual:.3e}, block asymmetry {asym:.3e}",
        space.label(),
        args.order
    );
    if residual > 1e-8 {
        eprintln!(
            "warning: two-body extraction residual {residual:.3e}; the block carries many-body content beyond the exported format"
        );
    }
    std::fs::write(&args.out, serialize_synthetic(&extracted))
        .map_err(qflow_core::Error::from)?;
    println!(
        "wrote {} ({} active orbitals, {} electrons, residual {residual:.3e})",
        args.out.display(),
        extracted.n_orb,
        extracted.n_elec
    );
    Ok(ExitCode::SUCCESS)
}
