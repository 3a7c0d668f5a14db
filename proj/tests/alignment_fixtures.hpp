#pragma once

#include <map>
#include <string>

namespace teleqa::testing {

struct AlignmentFixture {
  std::map<std::string, double> predictions;
  std::map<std::string, double> labels;
  double mad, mse, rmse, pearson, spearman;
};

// Residuals of the first fixture are {5,-5,2,-5,12}: MAD 29/5, MSE 223/5.
// The second has ties in both series (average ranks).
inline const AlignmentFixture kAlignmentFixtures[] = {
    {{{"a", 70}, {"b", 55}, {"c", 80}, {"d", 40}, {"e", 62}},
     {{"a", 65}, {"b", 60}, {"c", 78}, {"d", 45}, {"e", 50}},
     5.8, 44.6, 6.6783231428256, 0.8807057210399254, 0.9},
    {{{"a", 10}, {"b", 20}, {"c", 20}, {"d", 30}, {"e", 50}},
     {{"a", 12}, {"b", 18}, {"c", 25}, {"d", 25}, {"e", 40}},
     4.8, 31.6, 5.621387729022079, 0.9609457405594682, 0.9210526315789475},
};

}  // namespace teleqa::testing
