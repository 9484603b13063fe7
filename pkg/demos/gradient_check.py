"""Is the hand-written backward pass right?

Compares every parameter gradient of the hybrid loss, through the whole
toy-scale model, against central finite differences, then prints the worst
tensors. Expect relative errors around 1e-7; anything near 1e-4 would point
at a broken layer. Takes about half a minute.
"""

import time

from concad.experiment import preset_path
from concad.model import ModelConfig
from concad.verify import model_gradcheck

config = ModelConfig.load(preset_path("toy"))
t0 = time.perf_counter()
report = model_gradcheck(config, n=4, seed=0)
print(f"checked {report.n_checked} of {report.n_params} coordinates in {time.perf_counter() - t0:.1f}s")
for name in sorted(report.errors, key=report.errors.get, reverse=True)[:8]:
    print(f"  {name:<22} {report.errors[name]:.2e}")
print(f"max relative error {report.max_error:.2e} ({report.worst})")
