#pragma once
// Generated by tests/oracle/make_metric_oracle.py; do not edit.

struct MetricOracleRow {
  int pair;
  int size;
  double psnr, ssim, ms_ssim;
  int ms_scales;
};

inline constexpr MetricOracleRow kMetricOracle[] = {
    {0, 64, 30.837912584486, 0.935177561892, 0.988222829718, 3},
    {1, 64, 26.523735010948, 0.903771554565, 0.983927020167, 3},
    {2, 64, 23.102327909974, 0.880312190706, 0.979041622262, 3},
    {3, 64, 20.743896150659, 0.873786545725, 0.972932547764, 3},
    {4, 64, 18.687252716961, 0.857744481976, 0.955702532484, 3},
    {0, 256, 30.788696272365, 0.932989476510, 0.992278847774, 5},
    {1, 256, 26.435233726928, 0.899814676899, 0.989529228323, 5},
    {2, 256, 23.061214722988, 0.882163057292, 0.985026540193, 5},
    {3, 256, 20.610742768861, 0.871494628829, 0.975338065278, 5},
    {4, 256, 18.694435119613, 0.858078313385, 0.959939013173, 5},
};
