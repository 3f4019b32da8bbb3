"""The benchmark must exercise every kernel on both backends and report rows."""

from mazelm import benchmark, kernels


def test_benchmark_rows_cover_all_kernels():
    rows = benchmark.run(reps=1, scale=0.1)
    names = [r["kernel"] for r in rows]
    assert names == benchmark._KERNEL_NAMES + ["end_to_end_step"]
    for row in rows:
        assert row["reference_ms"] > 0
        if kernels.BACKEND == "native":
            assert row["native_ms"] > 0
            assert row["speedup"] > 0


def test_backend_binding_restored():
    before = {name: getattr(kernels, name) for name in benchmark._KERNEL_NAMES}
    benchmark.run(reps=1, scale=0.1)
    after = {name: getattr(kernels, name) for name in benchmark._KERNEL_NAMES}
    assert before == after
