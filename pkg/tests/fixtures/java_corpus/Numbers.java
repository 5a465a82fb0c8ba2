public class Numbers {
    /**
     * Adds the two long values that are passed in and returns the sum of
     * them as another long value for the caller to use.
     */
    public static long addNumbers(long first, long second) {
        return first + second;
    }

    /**
     * Picks the first character out of the string that is given to it and
     * hands that single character back to whoever called the method.
     */
    public static char firstChar(String text) {
        return text.charAt(0);
    }

    /**
     * A predicate that is wrong on purpose because it answers false for
     * every input that anyone could ever decide to pass into it.
     */
    public static boolean alwaysFalse(int x) {
        return false;
    }

    /**
     * Gives back exactly the number that was passed in, which is useful as
     * a placeholder when a single test case is all the generator finds.
     */
    public static int lonely(int x) {
        return x;
    }
}
