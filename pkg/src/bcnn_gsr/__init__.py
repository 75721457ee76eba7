"""Graph signal recovery with a learned Chebyshev-filter / Gaussian-mixture prior."""

from .graph import (
    ConvergenceError,
    Graph,
    GraphError,
    build_rbf_graph,
    chebyshev_apply,
    chebyshev_basis,
    from_adjacency,
    induced_subgraph,
    largest_eigenvalue,
    load_graph,
    save_graph,
)
from .prior import (
    PriorParams,
    grad_params_log_density,
    grad_x_log_density,
    log_unnorm_density,
    responsibilities,
    sample_prior_gibbs,
    sample_prior_langevin,
)
from .recovery import (
    BaselineConfig,
    Posterior,
    RecoveryConfig,
    gmrf_vb_baseline,
    recover,
    tikhonov_oracle,
    update_noise_posterior,
    update_signal_posterior,
)
from .signals import (
    GaussianMixture1D,
    SamplingMask,
    add_noise_at_snr,
    extract_patches,
    gen_bandlimited_gmrf,
    gen_ggd_signal,
    gen_gmm_signal,
    make_sampling_mask,
)
from .training import TrainConfig, cd_update, estimate_kld, histogram_kld, train_prior

__version__ = "0.1.0"
