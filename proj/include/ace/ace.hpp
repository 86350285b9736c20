#pragma once

#include "ace/error.hpp"
#include "ace/data.hpp"
#include "ace/numerics.hpp"
#include "ace/rng.hpp"
#include "ace/cox.hpp"
#include "ace/impute.hpp"
#include "ace/score.hpp"
#include "ace/estimator.hpp"
#include "ace/lmm.hpp"
#include "ace/parallel.hpp"
#include "ace/simulate.hpp"
#include "ace/power.hpp"
#include "ace/report.hpp"
