"""Two-bus AC instances."""

from toys import gen, instance, line


def two_bus_ac(d=60.0, dq=15.0, T=2, s_max=80.0):
    return instance(2, [line(1, 2, b=10.0, g=1.0, s_max=s_max)],
                    [gen("a", 1, cp=20, cz=50, pmin=5, pmax=100, qmin=-50, qmax=50),
                     gen("b", 2, cp=35, cz=20, pmin=0, pmax=40, qmin=-30, qmax=30)],
                    [[0.0] * T, [d] * T], reactive=[[0.0] * T, [dq] * T], ac=True)
