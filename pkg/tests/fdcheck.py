"""Central finite-difference gradient checking for the test suite.

Analytic gradients from autograd are compared against
(f(x + h e_i) - f(x - h e_i)) / 2h in double precision with h = 1e-4.
Inputs are expected to be non-degenerate (away from pooling ties,
integer sampling coordinates, and clamp borders); callers arrange that.
"""

import torch

FD_STEP = 1e-4
REL_TOL = 1e-4


def fd_gradcheck(loss_fn, tensors, max_coords_per_tensor=40, seed=0, rel_tol=REL_TOL):
    """Check d loss_fn / d tensor for every tensor in `tensors`.

    loss_fn: () -> scalar tensor, closing over `tensors`.
    tensors: dict name -> leaf tensor (float64, requires_grad=True).
    Checks up to max_coords_per_tensor randomly chosen coordinates per
    tensor; coordinates whose analytic gradient is below 1e-3 in magnitude
    are skipped for the relative comparison (their absolute difference must
    still stay below rel_tol).  Returns the number of compared coordinates.
    """
    gen = torch.Generator().manual_seed(seed)
    for t in tensors.values():
        assert t.dtype == torch.float64, "finite differences need float64"
        if t.grad is not None:
            t.grad = None
    loss = loss_fn()
    loss.backward()
    compared = 0
    for name, t in tensors.items():
        grad = t.grad
        assert grad is not None, f"{name}: no gradient reached this tensor"
        flat = t.detach().reshape(-1)
        n = flat.numel()
        k = min(max_coords_per_tensor, n)
        coords = torch.randperm(n, generator=gen)[:k]
        for i in coords.tolist():
            orig = flat[i].item()
            flat[i] = orig + FD_STEP
            with torch.no_grad():
                up = loss_fn().item()
            flat[i] = orig - FD_STEP
            with torch.no_grad():
                down = loss_fn().item()
            flat[i] = orig
            fd = (up - down) / (2 * FD_STEP)
            an = grad.reshape(-1)[i].item()
            diff = abs(an - fd)
            if max(abs(an), abs(fd)) < 1e-3:
                assert diff < rel_tol, f"{name}[{i}]: analytic {an} vs fd {fd}"
            else:
                rel = diff / max(abs(an), abs(fd))
                assert rel < rel_tol, (
                    f"{name}[{i}]: analytic {an} vs fd {fd} (rel {rel:.2e})"
                )
                compared += 1
    return compared
