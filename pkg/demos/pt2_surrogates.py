"""Fit the two PT2 surrogates and compare their step responses.

The TAR surrogate comes from the step-response envelope (15 % overshoot,
90 % rise within 5 s, settled within 8 s).  The DER surrogate is a
frequency-domain fit to the wind-farm control loop.
"""

from qucircle import build_control_loop, build_pt2, default_params, fit_der, fit_tar, step_response
from qucircle.pt2fit import step_metrics

tar = fit_tar()
loop = build_control_loop("wf-frc", default_params("wf-frc"))
der = fit_der(loop)

print(f"TAR surrogate: D = {tar.params.damping:.3f}, T = {tar.params.time_constant:.3f} s")
print(f"DER surrogate: D = {der.params.damping:.3f}, T = {der.params.time_constant:.3f} s")
print()
print(f"{'model':<10}{'overshoot':>11}{'t90 [s]':>10}{'t_stl [s]':>11}")
for name, model in (("loop", loop), ("pt2-der", build_pt2(der.params)), ("pt2-tar", build_pt2(tar.params))):
    t, y = step_response(model, 40.0)
    m = step_metrics(t, y)
    print(f"{name:<10}{m.overshoot:>11.3f}{m.rise_time_90:>10.2f}{m.settling_time:>11.2f}")

# the detailed loop is delayed and PT1-dominated: no overshoot, but a
# frequency fit still lands on a lightly underdamped PT2
