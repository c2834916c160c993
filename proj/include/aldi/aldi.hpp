#pragma once

#include "aldi/core.hpp"
#include "aldi/estimators.hpp"
#include "aldi/gmm.hpp"
#include "aldi/io.hpp"
#include "aldi/pipeline.hpp"
#include "aldi/problems.hpp"
#include "aldi/random.hpp"
#include "aldi/sampler.hpp"
#include "aldi/smoothing.hpp"
#include "aldi/validation.hpp"
