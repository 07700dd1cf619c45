#pragma once

#include "aglsc/checkpoint.hpp"
#include "aglsc/config.hpp"
#include "aglsc/dense.hpp"
#include "aglsc/error.hpp"
#include "aglsc/eval.hpp"
#include "aglsc/generative.hpp"
#include "aglsc/gradcheck.hpp"
#include "aglsc/graphconv.hpp"
#include "aglsc/hash.hpp"
#include "aglsc/highorder.hpp"
#include "aglsc/ingest.hpp"
#include "aglsc/log.hpp"
#include "aglsc/param_store.hpp"
#include "aglsc/rng.hpp"
#include "aglsc/sparse.hpp"
#include "aglsc/training.hpp"
