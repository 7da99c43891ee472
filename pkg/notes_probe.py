# Feasibility probe for the causal acceptance criteria (not part of the package).
import numpy as np
import dynst.simulator as sim


def strat_outcome(c, y):
    # Saturated-in-(male, #diagnoses) outcome model; proxy for the linear baseline.
    key = c.z[:, 0].astype(int) * 10 + c.z[:, 1:4].sum(axis=1).astype(int)
    m1 = np.zeros(c.n)
    m0 = np.zeros(c.n)
    for k in np.unique(key):
        sel = key == k
        for a, out in ((1, m1), (0, m0)):
            grp = sel & (c.a == a)
            out[sel] = y[grp].mean() if grp.any() else y[sel].mean()
    return m1, m0


def one_seed(cfg, tau):
    r = sim.generate(cfg)
    c, o = r.cohort, r.oracle
    psi = o.true_ate(tau)
    y = np.minimum(c.o, tau).astype(float)
    unadj = y[c.a == 1].mean() - y[c.a == 0].mean()
    m1, m0 = o.rmst1[tau], o.rmst0[tau]
    aipw_a = np.mean(m1 - m0 + c.a * (y - m1) / 0.5 - (1 - c.a) * (y - m0) / 0.5)
    pi = o.pi_true
    s1, s0 = strat_outcome(c, y)
    aipw_b = np.mean(s1 - s0 + c.a * (y - s1) / pi - (1 - c.a) * (y - s0) / (1 - pi))
    return psi, unadj, aipw_a, aipw_b, r.summary["censoring_rate"], r.summary["mean_observed_time"]


def probe(base, label, tau=12, seeds=6):
    rows = [one_seed(base.with_(seed=s), tau) for s in range(1, seeds + 1)]
    psi, unadj, a, b, cens, mo = map(np.mean, zip(*rows))
    ub = abs(unadj - psi)
    print(f"{label:36s} cens={cens:.3f} meanO={mo:5.1f} psi={psi:+.3f} unadj={unadj:+.3f} "
          f"|ub|={ub:.3f} | legA ({abs(a - psi) / ub:4.0%}) | legB ({abs(b - psi) / ub:4.0%})")


if __name__ == "__main__":
    base = sim.SimConfig(n_patients=10000)
    for off in (1.0, 1.5, 2.0, 2.5):
        for shift in (0.8, 1.2):
            probe(base.with_(vital_offset_scale=off, vital_illness_shift=shift), f"off={off} shift={shift}")
    print()
    for prev in (0.35, 0.4):
        probe(base.with_(vital_offset_scale=2.0, vital_illness_shift=1.0, diagnosis_prevalence=prev),
              f"off=2 shift=1 prev={prev}")
