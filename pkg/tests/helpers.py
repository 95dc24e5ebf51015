import numpy as np

from mixedtraffic.core import LeadingTrajectory


def constant_trajectory(speed=20.0, duration=60.0, dt=0.1, x0=0.0):
    t = dt * np.arange(int(round(duration / dt)) + 1)
    return LeadingTrajectory(t, x0 + speed * t, np.full(len(t), float(speed)))
