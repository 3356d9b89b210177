"""Cognitive-radar waveform selection testbed: ballistic truth, EKF tracking, adaptive bandwidth policies, seeded experiment harness."""
