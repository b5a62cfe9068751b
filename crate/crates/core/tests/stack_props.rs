use callstack_core::oracle::StackOp;
use callstack_core::stack::Stack;
use proptest::prelude::*;

fn op() -> impl Strategy<Value = StackOp> {
    prop_oneof![Just(StackOp::Push), Just(StackOp::Pop), Just(StackOp::Noop)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn matches_reference_stack(ops in proptest::collection::vec(op(), 0..200)) {
        let mut stack = Stack::new(0u64);
        let mut reference: Vec<u64> = Vec::new();
        let mut deepest = 0;
        for (t, op) in ops.iter().enumerate() {
            let frame = t as u64 + 1;
            stack.apply::<()>(*op, || Ok(frame)).unwrap();
            match op {
                StackOp::Push => reference.push(frame),
                StackOp::Pop => { reference.pop(); }
                StackOp::Noop => {}
            }
            deepest = deepest.max(reference.len());
            prop_assert_eq!(stack.depth(), reference.len());
            prop_assert_eq!(*stack.top(), reference.last().copied().unwrap_or(0));
            prop_assert_eq!(stack.max_depth(), deepest);
        }
    }

    #[test]
    fn push_then_pop_restores_top(prefix in proptest::collection::vec(op(), 0..50), x in 1u64..1000) {
        let mut stack = Stack::new(0u64);
        for op in &prefix {
            stack.apply::<()>(*op, || Ok(7)).unwrap();
        }
        let (top, depth) = (*stack.top(), stack.depth());
        stack.push(x);
        prop_assert_eq!(*stack.top(), x);
        stack.pop();
        prop_assert_eq!((*stack.top(), stack.depth()), (top, depth));
    }
}

#[test]
fn frame_closure_runs_only_on_push() {
    let mut stack = Stack::new(0);
    let mut calls = 0;
    for op in [StackOp::Noop, StackOp::Pop, StackOp::Push, StackOp::Noop] {
        stack
            .apply::<()>(op, || {
                calls += 1;
                Ok(5)
            })
            .unwrap();
    }
    assert_eq!(calls, 1);
    assert_eq!(*stack.top(), 5);
}

#[test]
fn pop_at_empty_keeps_zero_frame() {
    let mut stack = Stack::new(-1i32);
    for _ in 0..3 {
        stack.pop();
        assert_eq!(*stack.top(), -1);
        assert_eq!(stack.depth(), 0);
    }
    assert!(stack.apply::<&str>(StackOp::Push, || Err("boom")).is_err());
    assert_eq!(stack.depth(), 0);
}
