#pragma once

#include "campus/corpus.hpp"
#include "campus/error.hpp"
#include "campus/external_probe.hpp"
#include "campus/lexical.hpp"
#include "campus/metrics.hpp"
#include "campus/mlp.hpp"
#include "campus/probe.hpp"
#include "campus/report.hpp"
#include "campus/runner.hpp"
#include "campus/scheduler.hpp"
#include "campus/scorer.hpp"
#include "campus/synthetic.hpp"
