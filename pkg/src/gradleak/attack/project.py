from __future__ import annotations

import numpy as np


def project_to_vocabulary(x, embed, exclude=()):
    """Nearest vocabulary token (by cosine similarity) for each row of ``x``.

    ``x`` is (..., d); returns integer ids of shape x.shape[:-1]. Ties go to the
    lowest id. ``exclude`` lists ids that may never be chosen.
    """
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1)
    if np.any(norms == 0):
        where = np.argwhere(norms == 0)[0].tolist()
        raise ValueError(f"cannot project an all-zero embedding (position {where})")
    e = np.asarray(embed, dtype=np.float64)
    e_norm = np.linalg.norm(e, axis=1)
    e_norm[e_norm == 0] = np.inf
    sims = (x / norms[..., None]) @ (e / e_norm[:, None]).T
    if exclude:
        sims[..., list(exclude)] = -np.inf
    return sims.argmax(axis=-1)
